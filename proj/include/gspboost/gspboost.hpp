#pragma once

#include "error.hpp"
#include "panel.hpp"
#include "variance.hpp"
#include "kron.hpp"
#include "transform.hpp"
#include "boost.hpp"
#include "cv.hpp"
#include "gmm.hpp"
#include "modelselect.hpp"
#include "pipeline.hpp"
#include "simulate.hpp"
