#pragma once

#include "ilicast/config.hpp"
#include "ilicast/conformal.hpp"
#include "ilicast/csv.hpp"
#include "ilicast/epiweek.hpp"
#include "ilicast/errors.hpp"
#include "ilicast/features.hpp"
#include "ilicast/geography.hpp"
#include "ilicast/hash.hpp"
#include "ilicast/ingest.hpp"
#include "ilicast/model_spec.hpp"
#include "ilicast/regression.hpp"
#include "ilicast/runner.hpp"
#include "ilicast/scoring.hpp"
#include "ilicast/synthetic.hpp"
#include "ilicast/report.hpp"
