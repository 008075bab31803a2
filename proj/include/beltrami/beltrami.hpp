#pragma once

#include "beltrami/coeff_algebra.hpp"
#include "beltrami/coefficients.hpp"
#include "beltrami/elliptic_solver.hpp"
#include "beltrami/errors.hpp"
#include "beltrami/grid.hpp"
#include "beltrami/homogenization.hpp"
#include "beltrami/sigma_harmonic.hpp"
#include "beltrami/weights.hpp"
