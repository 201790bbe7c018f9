#pragma once

// Everything: tags, verification, records, sessions, channels, adaptation,
// experiments.

#include "macagg/experiment.hpp"
