// Apache License, Version 2.0, refer to LICENSE.txt

#pragma once

#include "srec/core_model.hpp"
#include "srec/eval_harness.hpp"
#include "srec/offline_em.hpp"
#include "srec/online_filter.hpp"
#include "srec/params_io.hpp"
#include "srec/probit.hpp"
#include "srec/snapshot.hpp"
#include "srec/synthetic.hpp"
