#ifndef PLUMESHINE_PLUMESHINE_HPP
#define PLUMESHINE_PLUMESHINE_HPP

// Everything except the HTTP service (plumeshine/service.hpp), which pulls in
// cpp-httplib and nlohmann/json.

#include "plumeshine/dataset.hpp"
#include "plumeshine/dispersion.hpp"
#include "plumeshine/dose_kernel.hpp"
#include "plumeshine/ensemble.hpp"
#include "plumeshine/error.hpp"
#include "plumeshine/evaluation.hpp"
#include "plumeshine/nuclide_db.hpp"
#include "plumeshine/pchip.hpp"
#include "plumeshine/pipeline.hpp"
#include "plumeshine/quadrature.hpp"
#include "plumeshine/random.hpp"
#include "plumeshine/tree.hpp"

#endif
