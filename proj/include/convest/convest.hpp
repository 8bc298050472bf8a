#pragma once

#include "convest/core.hpp"
#include "convest/numerics.hpp"
#include "convest/delay.hpp"
#include "convest/estimators.hpp"
#include "convest/rng.hpp"
#include "convest/simulate.hpp"
#include "convest/evaluate.hpp"
#include "convest/criteo.hpp"
#include "convest/config.hpp"
