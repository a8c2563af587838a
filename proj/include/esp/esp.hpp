#pragma once

#include "esp/common.hpp"
#include "esp/decode.hpp"
#include "esp/diagnostics.hpp"
#include "esp/draft_tree.hpp"
#include "esp/io.hpp"
#include "esp/mask_probe.hpp"
#include "esp/model.hpp"
#include "esp/tokenizer.hpp"
#include "esp/tree_attention.hpp"
