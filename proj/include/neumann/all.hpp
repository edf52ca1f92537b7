#ifndef NEUMANN_ALL_HPP
#define NEUMANN_ALL_HPP

#include "neumann/delay.hpp"
#include "neumann/expr.hpp"
#include "neumann/flow.hpp"
#include "neumann/loops.hpp"
#include "neumann/neumann.hpp"
#include "neumann/phase.hpp"
#include "neumann/solver.hpp"
#include "neumann/system.hpp"
#include "neumann/types.hpp"

#endif
