#pragma once

#include "checkpoint.hpp"
#include "experiment.hpp"
#include "fusion.hpp"
#include "io.hpp"
#include "layers.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "optim.hpp"
#include "phantom.hpp"
#include "preprocess.hpp"
#include "registration.hpp"
#include "report.hpp"
#include "semi_pl.hpp"
#include "stats.hpp"
#include "target.hpp"
#include "tensor.hpp"
#include "training.hpp"
#include "unet.hpp"
#include "volume.hpp"
#include "warp.hpp"
