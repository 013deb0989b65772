#pragma once

#include "kfp/errors.hpp"
#include "kfp/linalg.hpp"
#include "kfp/quadrature.hpp"
#include "kfp/hormander.hpp"
#include "kfp/testfn.hpp"
#include "kfp/phi.hpp"
#include "kfp/semigroup.hpp"
#include "kfp/fractional.hpp"
#include "kfp/verify.hpp"
#include "kfp/scenario.hpp"
