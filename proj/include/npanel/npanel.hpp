#pragma once

#include "npanel/baselines.hpp"
#include "npanel/csv.hpp"
#include "npanel/dgp.hpp"
#include "npanel/estimation.hpp"
#include "npanel/harness.hpp"
#include "npanel/matrix.hpp"
#include "npanel/neighbors.hpp"
#include "npanel/panel.hpp"
#include "npanel/parallel.hpp"
#include "npanel/quadrature.hpp"
#include "npanel/rng.hpp"
