#pragma once

#include "winfrac/cox_censoring.hpp"
#include "winfrac/data_model.hpp"
#include "winfrac/error.hpp"
#include "winfrac/fit.hpp"
#include "winfrac/links.hpp"
#include "winfrac/rng.hpp"
#include "winfrac/simulate.hpp"
#include "winfrac/solver.hpp"
#include "winfrac/variance.hpp"
#include "winfrac/weights.hpp"
#include "winfrac/winfun.hpp"
