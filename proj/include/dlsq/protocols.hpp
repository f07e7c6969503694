#pragma once

#include "dlsq/problem.hpp"

#include <span>
#include <vector>

namespace dlsq {

// Global state snapshot. For the portioned laws (sdls / full / tracking /
// double_layer): x[i], z[i] hold agent i's portion-concatenated vectors
// (length n) and y[i] holds the q per-portion blocks of length m_i each.
// For the eq-18 style baselines only x and z are used (full length n).
struct AgentState {
  std::vector<Vector> x;
  std::vector<Vector> y;
  std::vector<Vector> z;
};

// One scheduled packet: agent `sender` (1-indexed) broadcasts its guess of
// portion `portion` (1-indexed). The payload dimension is n_j <= bandwidth.
struct PortionMessage {
  int sender = 0;
  int portion = 0;
  Vector payload;
};

// Baseline packet carrying full-dimension x (and z where the law needs it).
struct BaselineMessage {
  int sender = 0;
  Vector x;
  Vector z;
};

enum class BaselineKind {
  consensus_projection_pi,  // x-diffusion + z-diffusion flow
  ahu_flow,                 // z-diffusion only in the x update
  gradient_tracking,        // consensus + tracked-gradient flow
  double_layer              // portioned primal-dual law, two-layer network
};

BaselineKind baseline_kind_from_name(const std::string& name);
std::string baseline_kind_name(BaselineKind kind);

// Immutable per-run data shared by every step: partition geometry, per-agent
// blocks, adjacency. Building it once keeps the inner loop allocation-free.
struct ProtocolContext {
  int p = 0, q = 0, m = 0, n = 0, bandwidth = 0;
  BSplitRule split_rule = BSplitRule::equal;
  std::vector<int> row_sizes, col_sizes, row_offsets, col_offsets;
  std::vector<Matrix> a_i;                   // agent row blocks, m_i x n
  std::vector<Vector> b_i;                   // agent observations
  std::vector<std::vector<Vector>> b_split;  // [agent][portion]
  std::vector<std::vector<int>> nb;          // agent neighbors (0-indexed, ascending)
  std::vector<std::vector<int>> nb_c;        // portion neighbors (0-indexed, ascending)
  std::vector<Matrix> gram_i;                // A_i^T A_i (gradient-tracking baseline)

  static ProtocolContext make(const PartitionedLae& pl, const UndirectedGraph& g,
                              const UndirectedGraph& g_c);
};

// Reusable buffers for one step evaluation (one instance per thread).
struct StepScratch {
  Vector diff;    // length n
  Vector grad;    // length n
  Vector tmp_n;   // length n
  Vector ydiff;   // max m_i
  Vector tmp_m;   // max m_i
  void resize_for(const ProtocolContext& cx);
};

// x_ij(0) = 0, y_ij(0) = -b_ij, z_ij(0) = 0.
AgentState init_agents(const ProtocolContext& cx);
AgentState init_agents(const PartitionedLae& pl, const UndirectedGraph& g,
                       const UndirectedGraph& g_c);

// Cyclic schedule: portion (k mod q) + 1 is exchanged at iteration k.
int scheduled_portion(long long k, int q);

// Message collection (what the network delivers at iteration k).
std::vector<std::vector<PortionMessage>> collect_scheduled_messages(
    const ProtocolContext& cx, const AgentState& state, long long k);
std::vector<std::vector<PortionMessage>> collect_full_messages(
    const ProtocolContext& cx, const AgentState& state);
std::vector<std::vector<BaselineMessage>> collect_baseline_messages(
    const ProtocolContext& cx, const AgentState& state, BaselineKind kind);

// One synchronous round of the scheduled law: the scheduled portion gets the
// diffusion updates, the others run the diffusion-free law with z frozen.
AgentState step_sdls(const ProtocolContext& cx, const AgentState& state,
                     const std::vector<std::vector<PortionMessage>>& inboxes,
                     const Gains& gains, long long k);

// Unscheduled law: every portion updates with diffusion each iteration.
AgentState step_full(const ProtocolContext& cx, const AgentState& state,
                     const std::vector<std::vector<PortionMessage>>& inboxes,
                     const Gains& gains);

// Tracking variant: identical to step_sdls except the y update subtracts the
// observation increment b_ij(k+1) - b_ij(k).
AgentState step_tracking(const ProtocolContext& cx, const AgentState& state,
                         const std::vector<std::vector<PortionMessage>>& inboxes,
                         const Gains& gains, long long k,
                         const std::vector<std::vector<Vector>>& delta_b);

AgentState init_baseline(const ProtocolContext& cx, BaselineKind kind);
AgentState step_baseline(const ProtocolContext& cx, BaselineKind kind,
                         const AgentState& state,
                         const std::vector<std::vector<BaselineMessage>>& inboxes,
                         const Gains& gains, double beta = 0.0);

// Exponential smoothing f(k+1) = (1-beta) f(k) + beta b(k+1), f(0) = b(0).
std::vector<Vector> lowpass_prefilter(const std::vector<Vector>& b_stream, double beta);

// ---- engine-facing in-place kernels (no allocation in the loop) ----
// next must be shaped like prev; delta_b may be null (static case). They are
// the same arithmetic as the message-based steps above.
void step_portioned_inplace(const ProtocolContext& cx, const AgentState& prev,
                            long long k, bool all_scheduled, const Gains& gains,
                            const std::vector<std::vector<Vector>>* delta_b,
                            int agent_begin, int agent_end, AgentState& next,
                            StepScratch& scratch);
void step_baseline_inplace(const ProtocolContext& cx, BaselineKind kind,
                           const AgentState& prev, const Gains& gains, double beta,
                           int agent_begin, int agent_end, AgentState& next,
                           StepScratch& scratch);

// Snapshot serialization: one matrix-format file per (agent, field).
void save_agent_state(const std::string& dir, const ProtocolContext& cx,
                      const AgentState& state);

}  // namespace dlsq
