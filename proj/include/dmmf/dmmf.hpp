#pragma once

#include "dmmf/analysis.hpp"
#include "dmmf/distributions.hpp"
#include "dmmf/equilibrium.hpp"
#include "dmmf/errors.hpp"
#include "dmmf/harness.hpp"
#include "dmmf/io.hpp"
#include "dmmf/mechanism.hpp"
#include "dmmf/rng.hpp"
#include "dmmf/stats.hpp"
#include "dmmf/strategies.hpp"
