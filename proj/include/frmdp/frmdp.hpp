#pragma once

#include "frmdp/core.hpp"
#include "frmdp/mdp.hpp"
#include "frmdp/policy.hpp"
#include "frmdp/soft_dp.hpp"
#include "frmdp/rng.hpp"
#include "frmdp/generator.hpp"
#include "frmdp/flow.hpp"
#include "frmdp/bounds.hpp"
#include "frmdp/npg.hpp"
#include "frmdp/diagnostics.hpp"
#include "frmdp/io.hpp"
#include "frmdp/experiment.hpp"
