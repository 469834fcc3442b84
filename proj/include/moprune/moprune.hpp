#pragma once

#include "moprune/datamodel.hpp"
#include "moprune/rng.hpp"
#include "moprune/trainer.hpp"
#include "moprune/ood.hpp"
#include "moprune/moea.hpp"
#include "moprune/analysis.hpp"
#include "moprune/artifacts.hpp"
#include "moprune/cli.hpp"
