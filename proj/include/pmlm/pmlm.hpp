#pragma once

#include "numeric.hpp"
#include "random.hpp"
#include "sequences.hpp"
#include "mvn_cdf.hpp"
#include "gwi.hpp"
#include "skewlink.hpp"
#include "models.hpp"
#include "harness.hpp"
#include "fit.hpp"
#include "io.hpp"
