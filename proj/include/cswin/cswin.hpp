#pragma once

#include "cswin/attention.hpp"
#include "cswin/augment.hpp"
#include "cswin/carafe.hpp"
#include "cswin/checkpoint.hpp"
#include "cswin/config_io.hpp"
#include "cswin/data.hpp"
#include "cswin/errors.hpp"
#include "cswin/gradcheck.hpp"
#include "cswin/loss.hpp"
#include "cswin/mask.hpp"
#include "cswin/metrics.hpp"
#include "cswin/network.hpp"
#include "cswin/ops.hpp"
#include "cswin/optim.hpp"
#include "cswin/random.hpp"
#include "cswin/tensor.hpp"
#include "cswin/train.hpp"
#include "cswin/tsr.hpp"
