#pragma once

#include "model.hpp"
#include "biotsavart.hpp"
#include "diagnostics.hpp"
#include "solver.hpp"
#include "oracles.hpp"
#include "config.hpp"
#include "io.hpp"
#include "app.hpp"
