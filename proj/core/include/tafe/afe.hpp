#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "tafe/params.hpp"
#include "tafe/pyramid.hpp"
#include "tafe/tensor.hpp"

namespace tafe {

// Asymmetric feature enhancement. Each pyramid level gets a 5x5 aggregation
// conv (ReLU), then two blocks of three strip-conv branches with k = 3, 5, 7:
//
//   anatomy     S_m = Conv_{k x 1}(Conv_{1 x k}(A))          (cascaded)
//   instrument  S_m = Conv_{k x 1}(A) + Conv_{1 x k}(A)      (parallel)
//   block       E   = Conv_{1 x 1}(S_0 + S_1 + S_2 + A) * A
//
// and the level output is E_anatomy + E_instrument. Strip convs carry no
// bias; nothing after the aggregation is activated.

enum class BlockTopology { Anatomy, Instrument };

inline constexpr std::array<std::size_t, 3> kStripSizes{3, 5, 7};
inline constexpr std::size_t kAggregateSize = 5;

const char* topology_name(BlockTopology t);

// Parameter prefixes below `layer_prefix`, e.g. "stage0.afe.l1".
std::string aggregate_prefix(const std::string& layer_prefix, BlockTopology t, bool shared);
std::string strip_prefix(const std::string& layer_prefix, BlockTopology t, std::size_t m,
                         bool row);
std::string fuse_prefix(const std::string& layer_prefix, BlockTopology t);
std::string afe_layer_prefix(const std::string& stage_prefix, std::size_t level);

void init_afe_layer(ParamStore& store, ParamInit& init, const std::string& layer_prefix,
                    std::size_t d, bool share_aggregation);

// ---- pure forward ops ------------------------------------------------------

// ReLU(Conv5x5(C_l)), same padding.
Tensor aggregate(const Tensor& c_l, const ConvKernel& kernel);
// Row conv (1 x k) then column conv (k x 1).
Tensor anatomy_branch(const Tensor& c_agg, const ConvKernel& row, const ConvKernel& col);
// Column conv plus row conv of the same input.
Tensor instrument_branch(const Tensor& c_agg, const ConvKernel& row, const ConvKernel& col);
// Block fusion given an already aggregated map.
Tensor enhance_from_aggregate(const Tensor& c_agg, const ParamStore& params,
                              const std::string& layer_prefix, BlockTopology topology);
// Aggregation plus block fusion: the attention map E_l of one block.
Tensor enhance_block(const Tensor& c_l, const ParamStore& params, const std::string& layer_prefix,
                     BlockTopology topology, bool share_aggregation = true);
// Sum of both blocks for every level of the pyramid.
FeaturePyramid afe_forward(const FeaturePyramid& p, const ParamStore& params,
                           const std::string& stage_prefix, bool share_aggregation = true);

// ---- graph ops -------------------------------------------------------------

namespace ad {
Var afe_aggregate(Binding& b, const std::string& prefix, Var c_l);
Var anatomy_branch(Binding& b, const std::string& layer_prefix, std::size_t m, Var c_agg);
Var instrument_branch(Binding& b, const std::string& layer_prefix, std::size_t m, Var c_agg);
Var enhance_from_aggregate(Binding& b, const std::string& layer_prefix, BlockTopology topology,
                           Var c_agg);
Var afe_layer(Binding& b, const std::string& layer_prefix, Var c_l, bool share_aggregation);
std::vector<Var> afe_forward(Binding& b, const std::string& stage_prefix,
                             const std::vector<Var>& pyramid, bool share_aggregation);
}  // namespace ad

}  // namespace tafe
