#pragma once

// Everything except the HTTP layer (rdlab/server.hpp pulls in cpp-httplib).

#include "rdlab/binning.hpp"
#include "rdlab/bundled.hpp"
#include "rdlab/dgp.hpp"
#include "rdlab/econometrics.hpp"
#include "rdlab/evaluation.hpp"
#include "rdlab/experiment.hpp"
#include "rdlab/io.hpp"
#include "rdlab/montecarlo.hpp"
#include "rdlab/plot.hpp"
#include "rdlab/random.hpp"
