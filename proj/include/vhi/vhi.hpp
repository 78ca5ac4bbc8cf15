#pragma once

// Everything except the scenario layer, which pulls in the JSON reader.

#include "vhi/contact.hpp"
#include "vhi/control.hpp"
#include "vhi/convergence.hpp"
#include "vhi/csv.hpp"
#include "vhi/errors.hpp"
#include "vhi/mesh.hpp"
#include "vhi/nonsmooth.hpp"
#include "vhi/parallel.hpp"
#include "vhi/solver.hpp"
