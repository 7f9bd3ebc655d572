#pragma once

#include "tcslot/augment.hpp"
#include "tcslot/autograd.hpp"
#include "tcslot/checkpoint.hpp"
#include "tcslot/dataset.hpp"
#include "tcslot/embedding.hpp"
#include "tcslot/errors.hpp"
#include "tcslot/eval.hpp"
#include "tcslot/geometry.hpp"
#include "tcslot/heatmap.hpp"
#include "tcslot/loss.hpp"
#include "tcslot/model.hpp"
#include "tcslot/nn.hpp"
#include "tcslot/ops.hpp"
#include "tcslot/synthdata.hpp"
#include "tcslot/tensor.hpp"
#include "tcslot/trainer.hpp"
