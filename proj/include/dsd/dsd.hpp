#pragma once

#include "dsd/core/adam.hpp"
#include "dsd/core/checkpoint.hpp"
#include "dsd/core/error.hpp"
#include "dsd/core/gradcheck.hpp"
#include "dsd/core/linalg.hpp"
#include "dsd/core/lstm.hpp"
#include "dsd/core/params.hpp"
#include "dsd/core/tape.hpp"
#include "dsd/core/tensor.hpp"

#include "dsd/data/alphabet.hpp"
#include "dsd/data/dataset.hpp"
#include "dsd/data/stroke.hpp"
#include "dsd/data/synth.hpp"
#include "dsd/data/utf8.hpp"

#include "dsd/seg/ctc.hpp"
#include "dsd/seg/features.hpp"
#include "dsd/seg/segnet.hpp"

#include "dsd/model/dsd_model.hpp"
#include "dsd/model/mdn.hpp"

#include "dsd/train/losses.hpp"
#include "dsd/train/trainer.hpp"

#include "dsd/app/audit.hpp"
#include "dsd/app/database.hpp"
#include "dsd/app/identify.hpp"
#include "dsd/app/interpolate.hpp"
#include "dsd/app/lbfgsb.hpp"
#include "dsd/app/newchar.hpp"

#include "dsd/render/svg.hpp"
