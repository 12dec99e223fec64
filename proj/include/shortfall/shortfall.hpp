#pragma once

#include "shortfall/errors.hpp"
#include "shortfall/market.hpp"
#include "shortfall/payoff.hpp"
#include "shortfall/dynkin.hpp"
#include "shortfall/parallel.hpp"
#include "shortfall/shortfall_dp.hpp"
#include "shortfall/oracle.hpp"
#include "shortfall/simulator.hpp"
