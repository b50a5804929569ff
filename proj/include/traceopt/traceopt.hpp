#pragma once

// Umbrella header: the full sparse nonlinear least-squares stack.

#include "traceopt/assemble.hpp"
#include "traceopt/bsr.hpp"
#include "traceopt/camera.hpp"
#include "traceopt/csr.hpp"
#include "traceopt/errors.hpp"
#include "traceopt/io/bal.hpp"
#include "traceopt/io/g2o.hpp"
#include "traceopt/io/synthetic.hpp"
#include "traceopt/lie.hpp"
#include "traceopt/lm.hpp"
#include "traceopt/problems.hpp"
#include "traceopt/solver/cholesky.hpp"
#include "traceopt/solver/pcg.hpp"
#include "traceopt/spgemm.hpp"
#include "traceopt/trace.hpp"
