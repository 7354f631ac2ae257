#pragma once

#include "nlmix/bootstrap.hpp"
#include "nlmix/convolution.hpp"
#include "nlmix/covariance.hpp"
#include "nlmix/data.hpp"
#include "nlmix/distributions.hpp"
#include "nlmix/errors.hpp"
#include "nlmix/fit_result.hpp"
#include "nlmix/lme.hpp"
#include "nlmix/mcem.hpp"
#include "nlmix/optimize.hpp"
#include "nlmix/quadrature.hpp"
#include "nlmix/random.hpp"
#include "nlmix/simulation.hpp"
#include "nlmix/version.hpp"
