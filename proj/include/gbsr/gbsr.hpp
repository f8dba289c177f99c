#ifndef GBSR_GBSR_HPP
#define GBSR_GBSR_HPP

#include "gbsr/backbone.hpp"
#include "gbsr/common.hpp"
#include "gbsr/config.hpp"
#include "gbsr/data.hpp"
#include "gbsr/denoiser.hpp"
#include "gbsr/eval.hpp"
#include "gbsr/experiment.hpp"
#include "gbsr/graph.hpp"
#include "gbsr/hsic.hpp"
#include "gbsr/io.hpp"
#include "gbsr/objective.hpp"
#include "gbsr/trainer.hpp"

#endif
