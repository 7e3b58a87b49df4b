#pragma once

#include "latentsafe/barrier.hpp"
#include "latentsafe/checkpoint.hpp"
#include "latentsafe/config.hpp"
#include "latentsafe/conv.hpp"
#include "latentsafe/env.hpp"
#include "latentsafe/gemm.hpp"
#include "latentsafe/metrics.hpp"
#include "latentsafe/model.hpp"
#include "latentsafe/nn.hpp"
#include "latentsafe/policy.hpp"
#include "latentsafe/replay.hpp"
#include "latentsafe/rng.hpp"
#include "latentsafe/tensor.hpp"
#include "latentsafe/trainer.hpp"
