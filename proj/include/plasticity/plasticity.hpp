#pragma once

#include "plasticity/config.hpp"
#include "plasticity/errors.hpp"
#include "plasticity/linalg.hpp"
#include "plasticity/metrics.hpp"
#include "plasticity/nn.hpp"
#include "plasticity/optim.hpp"
#include "plasticity/problems.hpp"
#include "plasticity/rng.hpp"
#include "plasticity/runner.hpp"
#include "plasticity/tensor.hpp"
