#pragma once

// Umbrella header.

#include "bvf/data.hpp"
#include "bvf/decomp.hpp"
#include "bvf/ensemble.hpp"
#include "bvf/error.hpp"
#include "bvf/forecast.hpp"
#include "bvf/learners.hpp"
#include "bvf/regress.hpp"
#include "bvf/rng.hpp"
#include "bvf/runner.hpp"
