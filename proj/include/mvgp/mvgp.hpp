#pragma once

#include "mvgp/common.hpp"
#include "mvgp/dataset.hpp"
#include "mvgp/divergence.hpp"
#include "mvgp/experiment.hpp"
#include "mvgp/gp_view.hpp"
#include "mvgp/gradcheck.hpp"
#include "mvgp/kernel.hpp"
#include "mvgp/linalg.hpp"
#include "mvgp/model_io.hpp"
#include "mvgp/objective.hpp"
#include "mvgp/rng.hpp"
#include "mvgp/trainer.hpp"
