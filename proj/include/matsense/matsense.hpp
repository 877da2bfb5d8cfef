#pragma once

#include "matsense/rng.hpp"
#include "matsense/linalg.hpp"
#include "matsense/io.hpp"
#include "matsense/sensing.hpp"
#include "matsense/denoise.hpp"
#include "matsense/estimators.hpp"
#include "matsense/fixed_point.hpp"
#include "matsense/experiments.hpp"
