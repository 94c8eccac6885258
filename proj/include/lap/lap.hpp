/// @file lap.hpp Everything at once.

#pragma once

#include "acceptance.hpp"
#include "action.hpp"
#include "config.hpp"
#include "convergence.hpp"
#include "csv.hpp"
#include "model.hpp"
#include "optimize.hpp"
#include "oracle.hpp"
#include "pipeline.hpp"
#include "pointprocess.hpp"
#include "random.hpp"
#include "registry.hpp"
#include "secondorder.hpp"
#include "simulate.hpp"
#include "spline.hpp"
#include "types.hpp"
#include "variational.hpp"
