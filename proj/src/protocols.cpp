#include "dlsq/protocols.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace dlsq {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

BaselineKind baseline_kind_from_name(const std::string& name) {
  if (name == "consensus_projection_pi") return BaselineKind::consensus_projection_pi;
  if (name == "ahu_flow") return BaselineKind::ahu_flow;
  if (name == "gradient_tracking") return BaselineKind::gradient_tracking;
  if (name == "double_layer") return BaselineKind::double_layer;
  throw std::invalid_argument("unknown baseline kind: " + name);
}

std::string baseline_kind_name(BaselineKind kind) {
  switch (kind) {
    case BaselineKind::consensus_projection_pi: return "consensus_projection_pi";
    case BaselineKind::ahu_flow: return "ahu_flow";
    case BaselineKind::gradient_tracking: return "gradient_tracking";
    case BaselineKind::double_layer: return "double_layer";
  }
  return "?";
}

ProtocolContext ProtocolContext::make(const PartitionedLae& pl, const UndirectedGraph& g,
                                      const UndirectedGraph& g_c) {
  require(g.vertex_count == pl.p(), "protocol context: G must have p vertices");
  require(g_c.vertex_count == pl.q(), "protocol context: G_c must have q vertices");
  ProtocolContext cx;
  cx.p = pl.p();
  cx.q = pl.q();
  cx.m = pl.m();
  cx.n = pl.n();
  cx.bandwidth = pl.bandwidth;
  cx.split_rule = pl.split_rule;
  cx.row_sizes = pl.row_sizes;
  cx.col_sizes = pl.col_sizes;
  cx.row_offsets = pl.row_offsets();
  cx.col_offsets = pl.col_offsets();
  cx.b_split = pl.b_split;
  cx.a_i.reserve(static_cast<size_t>(cx.p));
  cx.b_i.reserve(static_cast<size_t>(cx.p));
  cx.gram_i.reserve(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i) {
    const Matrix ai = pl.problem.a.middleRows(cx.row_offsets[static_cast<size_t>(i)],
                                              cx.row_sizes[static_cast<size_t>(i)]);
    cx.a_i.push_back(ai);
    cx.b_i.push_back(pl.problem.b.segment(cx.row_offsets[static_cast<size_t>(i)],
                                          cx.row_sizes[static_cast<size_t>(i)]));
    cx.gram_i.push_back(ai.transpose() * ai);
  }
  const auto nb1 = g.neighbor_lists();
  cx.nb.resize(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i)
    for (int v : nb1[static_cast<size_t>(i)]) cx.nb[static_cast<size_t>(i)].push_back(v - 1);
  const auto nbc1 = g_c.neighbor_lists();
  cx.nb_c.resize(static_cast<size_t>(cx.q));
  for (int j = 0; j < cx.q; ++j)
    for (int v : nbc1[static_cast<size_t>(j)]) cx.nb_c[static_cast<size_t>(j)].push_back(v - 1);
  return cx;
}

void StepScratch::resize_for(const ProtocolContext& cx) {
  int max_m = 0;
  for (int s : cx.row_sizes) max_m = std::max(max_m, s);
  diff.resize(cx.n);
  grad.resize(cx.n);
  tmp_n.resize(cx.n);
  ydiff.resize(max_m);
  tmp_m.resize(max_m);
}

AgentState init_agents(const ProtocolContext& cx) {
  AgentState st;
  st.x.assign(static_cast<size_t>(cx.p), Vector::Zero(cx.n));
  st.z.assign(static_cast<size_t>(cx.p), Vector::Zero(cx.n));
  st.y.resize(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i) {
    const int mi = cx.row_sizes[static_cast<size_t>(i)];
    Vector yi(static_cast<Eigen::Index>(cx.q) * mi);
    for (int j = 0; j < cx.q; ++j)
      yi.segment(static_cast<Eigen::Index>(j) * mi, mi) =
          -cx.b_split[static_cast<size_t>(i)][static_cast<size_t>(j)];
    st.y[static_cast<size_t>(i)] = std::move(yi);
  }
  return st;
}

AgentState init_agents(const PartitionedLae& pl, const UndirectedGraph& g,
                       const UndirectedGraph& g_c) {
  return init_agents(ProtocolContext::make(pl, g, g_c));
}

int scheduled_portion(long long k, int q) {
  require(q >= 1, "scheduled_portion: q must be at least 1");
  require(k >= 0, "scheduled_portion: k must be non-negative");
  return static_cast<int>(k % q) + 1;
}

std::vector<std::vector<PortionMessage>> collect_scheduled_messages(
    const ProtocolContext& cx, const AgentState& state, long long k) {
  const int j = scheduled_portion(k, cx.q) - 1;
  const int nj = cx.col_sizes[static_cast<size_t>(j)];
  std::vector<std::vector<PortionMessage>> inboxes(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i) {
    PortionMessage msg;
    msg.sender = i + 1;
    msg.portion = j + 1;
    msg.payload =
        state.x[static_cast<size_t>(i)].segment(cx.col_offsets[static_cast<size_t>(j)], nj);
    for (int l : cx.nb[static_cast<size_t>(i)])
      inboxes[static_cast<size_t>(l)].push_back(msg);
  }
  for (auto& box : inboxes)
    std::sort(box.begin(), box.end(),
              [](const PortionMessage& a, const PortionMessage& b) { return a.sender < b.sender; });
  return inboxes;
}

std::vector<std::vector<PortionMessage>> collect_full_messages(const ProtocolContext& cx,
                                                               const AgentState& state) {
  std::vector<std::vector<PortionMessage>> inboxes(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i) {
    for (int l : cx.nb[static_cast<size_t>(i)]) {
      for (int j = 0; j < cx.q; ++j) {
        PortionMessage msg;
        msg.sender = i + 1;
        msg.portion = j + 1;
        msg.payload = state.x[static_cast<size_t>(i)].segment(
            cx.col_offsets[static_cast<size_t>(j)], cx.col_sizes[static_cast<size_t>(j)]);
        inboxes[static_cast<size_t>(l)].push_back(std::move(msg));
      }
    }
  }
  for (auto& box : inboxes)
    std::sort(box.begin(), box.end(), [](const PortionMessage& a, const PortionMessage& b) {
      return a.sender != b.sender ? a.sender < b.sender : a.portion < b.portion;
    });
  return inboxes;
}

std::vector<std::vector<BaselineMessage>> collect_baseline_messages(
    const ProtocolContext& cx, const AgentState& state, BaselineKind) {
  std::vector<std::vector<BaselineMessage>> inboxes(static_cast<size_t>(cx.p));
  for (int i = 0; i < cx.p; ++i) {
    BaselineMessage msg;
    msg.sender = i + 1;
    msg.x = state.x[static_cast<size_t>(i)];
    msg.z = state.z[static_cast<size_t>(i)];
    for (int l : cx.nb[static_cast<size_t>(i)])
      inboxes[static_cast<size_t>(l)].push_back(msg);
  }
  for (auto& box : inboxes)
    std::sort(box.begin(), box.end(),
              [](const BaselineMessage& a, const BaselineMessage& b) { return a.sender < b.sender; });
  return inboxes;
}

namespace {

// Core portioned update for one agent. The message-based steps and the
// engine both go through here, so their arithmetic is identical.
// payload(l_idx, j) returns the start of neighbor l_idx's portion-j block.
template <typename PayloadFn>
void update_agent_portioned(const ProtocolContext& cx, const AgentState& prev, int i,
                            int sched_j, bool all_scheduled, const Gains& gains,
                            const std::vector<Vector>* delta_i, PayloadFn&& payload,
                            AgentState& next, StepScratch& s) {
  const int mi = cx.row_sizes[static_cast<size_t>(i)];
  const auto& nbrs = cx.nb[static_cast<size_t>(i)];
  const Vector& xi = prev.x[static_cast<size_t>(i)];
  const Vector& yi = prev.y[static_cast<size_t>(i)];
  const Vector& zi = prev.z[static_cast<size_t>(i)];
  Vector& xn = next.x[static_cast<size_t>(i)];
  Vector& yn = next.y[static_cast<size_t>(i)];
  Vector& zn = next.z[static_cast<size_t>(i)];
  const double alpha = gains.alpha;

  for (int j = 0; j < cx.q; ++j) {
    const int nj = cx.col_sizes[static_cast<size_t>(j)];
    const int cj = cx.col_offsets[static_cast<size_t>(j)];
    const auto a_ij = cx.a_i[static_cast<size_t>(i)].middleCols(cj, nj);
    const auto x_ij = xi.segment(cj, nj);
    const auto y_ij = yi.segment(static_cast<Eigen::Index>(j) * mi, mi);
    const auto z_ij = zi.segment(cj, nj);
    auto g = s.grad.head(nj);
    g.noalias() = a_ij.transpose() * y_ij;
    if (all_scheduled || j == sched_j) {
      auto d = s.diff.head(nj);
      d.setZero();
      for (size_t t = 0; t < nbrs.size(); ++t) {
        Eigen::Map<const Vector> x_lj(payload(static_cast<int>(t), j), nj);
        d += x_ij - x_lj;
      }
      xn.segment(cj, nj) = x_ij - alpha * (g + gains.k_p * d + gains.k_i * z_ij);
      zn.segment(cj, nj) = z_ij + alpha * d;
    } else {
      xn.segment(cj, nj) = x_ij - alpha * (g + gains.k_i * z_ij);
      zn.segment(cj, nj) = z_ij;
    }
  }

  // y updates second: they consume x(k+1) - x(k) of the same agent only.
  for (int j = 0; j < cx.q; ++j) {
    const int nj = cx.col_sizes[static_cast<size_t>(j)];
    const int cj = cx.col_offsets[static_cast<size_t>(j)];
    const auto a_ij = cx.a_i[static_cast<size_t>(i)].middleCols(cj, nj);
    const auto y_ij = yi.segment(static_cast<Eigen::Index>(j) * mi, mi);
    auto yd = s.ydiff.head(mi);
    yd.setZero();
    for (int l : cx.nb_c[static_cast<size_t>(j)])
      yd += y_ij - yi.segment(static_cast<Eigen::Index>(l) * mi, mi);
    auto ax = s.tmp_m.head(mi);
    ax.noalias() = a_ij * (xn.segment(cj, nj) - xi.segment(cj, nj));
    if (delta_i) {
      yn.segment(static_cast<Eigen::Index>(j) * mi, mi) =
          y_ij + ax - alpha * yd - (*delta_i)[static_cast<size_t>(j)];
    } else {
      yn.segment(static_cast<Eigen::Index>(j) * mi, mi) = y_ij + ax - alpha * yd;
    }
  }
}

// Baseline update for one agent; x/z payload pointers are full length-n
// vectors of the neighbors (message data or the previous snapshot).
template <typename XFn, typename ZFn>
void update_agent_baseline(const ProtocolContext& cx, BaselineKind kind,
                           const AgentState& prev, int i, const Gains& gains, double beta,
                           XFn&& x_of, ZFn&& z_of, AgentState& next, StepScratch& s) {
  const auto& nbrs = cx.nb[static_cast<size_t>(i)];
  const Vector& xi = prev.x[static_cast<size_t>(i)];
  const Vector& zi = prev.z[static_cast<size_t>(i)];
  Vector& xn = next.x[static_cast<size_t>(i)];
  Vector& zn = next.z[static_cast<size_t>(i)];
  const double alpha = gains.alpha;

  if (kind == BaselineKind::double_layer) {
    const int mi = cx.row_sizes[static_cast<size_t>(i)];
    const Vector& yi = prev.y[static_cast<size_t>(i)];
    Vector& yn = next.y[static_cast<size_t>(i)];
    for (int j = 0; j < cx.q; ++j) {
      const int nj = cx.col_sizes[static_cast<size_t>(j)];
      const int cj = cx.col_offsets[static_cast<size_t>(j)];
      const auto a_ij = cx.a_i[static_cast<size_t>(i)].middleCols(cj, nj);
      const auto x_ij = xi.segment(cj, nj);
      const auto z_ij = zi.segment(cj, nj);
      const auto y_ij = yi.segment(static_cast<Eigen::Index>(j) * mi, mi);
      auto xd = s.diff.head(nj);
      auto zd = s.grad.head(nj);
      xd.setZero();
      zd.setZero();
      for (size_t t = 0; t < nbrs.size(); ++t) {
        Eigen::Map<const Vector> x_lj(x_of(static_cast<int>(t)) + cj, nj);
        Eigen::Map<const Vector> z_lj(z_of(static_cast<int>(t)) + cj, nj);
        xd += x_ij - x_lj;
        zd += z_ij - z_lj;
      }
      auto ay = s.tmp_n.head(nj);
      ay.noalias() = a_ij.transpose() * y_ij;
      xn.segment(cj, nj) = x_ij - alpha * ay - beta * xd - beta * zd;
      zn.segment(cj, nj) = z_ij + beta * xd;
    }
    for (int j = 0; j < cx.q; ++j) {
      const int nj = cx.col_sizes[static_cast<size_t>(j)];
      const int cj = cx.col_offsets[static_cast<size_t>(j)];
      const auto a_ij = cx.a_i[static_cast<size_t>(i)].middleCols(cj, nj);
      const auto y_ij = yi.segment(static_cast<Eigen::Index>(j) * mi, mi);
      auto yd = s.ydiff.head(mi);
      yd.setZero();
      for (int l : cx.nb_c[static_cast<size_t>(j)])
        yd += y_ij - yi.segment(static_cast<Eigen::Index>(l) * mi, mi);
      auto ax = s.tmp_m.head(mi);
      ax.noalias() = a_ij * (xn.segment(cj, nj) - xi.segment(cj, nj));
      yn.segment(static_cast<Eigen::Index>(j) * mi, mi) = y_ij + ax - alpha * yd;
    }
    return;
  }

  auto xd = s.diff.head(cx.n);
  auto zd = s.grad.head(cx.n);
  xd.setZero();
  zd.setZero();
  for (size_t t = 0; t < nbrs.size(); ++t) {
    Eigen::Map<const Vector> xl(x_of(static_cast<int>(t)), cx.n);
    Eigen::Map<const Vector> zl(z_of(static_cast<int>(t)), cx.n);
    xd += xi - xl;
    zd += zi - zl;
  }
  switch (kind) {
    case BaselineKind::consensus_projection_pi: {
      auto r = s.tmp_m.head(cx.row_sizes[static_cast<size_t>(i)]);
      r.noalias() = cx.a_i[static_cast<size_t>(i)] * xi;
      r -= cx.b_i[static_cast<size_t>(i)];
      auto grad = s.tmp_n.head(cx.n);
      grad.noalias() = cx.a_i[static_cast<size_t>(i)].transpose() * r;
      xn = xi - alpha * (grad + gains.k_p * xd + zd);
      zn = zi + alpha * xd;
      break;
    }
    case BaselineKind::ahu_flow: {
      auto r = s.tmp_m.head(cx.row_sizes[static_cast<size_t>(i)]);
      r.noalias() = cx.a_i[static_cast<size_t>(i)] * xi;
      r -= cx.b_i[static_cast<size_t>(i)];
      auto grad = s.tmp_n.head(cx.n);
      grad.noalias() = cx.a_i[static_cast<size_t>(i)].transpose() * r;
      xn = xi - alpha * (grad + gains.k_p * zd);
      zn = zi + alpha * xd;
      break;
    }
    case BaselineKind::gradient_tracking: {
      xn = xi - alpha * (xd + gains.k_i * zi);
      auto dx = s.tmp_n.head(cx.n);
      dx = xn - xi;
      zn = zi - alpha * zd;
      zn.noalias() += cx.gram_i[static_cast<size_t>(i)] * dx;
      break;
    }
    case BaselineKind::double_layer:
      break;  // handled above
  }
}

AgentState shaped_like(const AgentState& other) {
  AgentState next;
  next.x.resize(other.x.size());
  next.y.resize(other.y.size());
  next.z.resize(other.z.size());
  for (size_t i = 0; i < other.x.size(); ++i) {
    next.x[i].resize(other.x[i].size());
    next.y[i].resize(other.y[i].size());
    next.z[i].resize(other.z[i].size());
  }
  return next;
}

void validate_state(const ProtocolContext& cx, const AgentState& state, bool with_y) {
  require(static_cast<int>(state.x.size()) == cx.p && static_cast<int>(state.z.size()) == cx.p,
          "step: state has wrong agent count");
  for (int i = 0; i < cx.p; ++i) {
    require(state.x[static_cast<size_t>(i)].size() == cx.n &&
                state.z[static_cast<size_t>(i)].size() == cx.n,
            "step: agent state has wrong x/z dimension");
    if (with_y)
      require(state.y[static_cast<size_t>(i)].size() ==
                  static_cast<Eigen::Index>(cx.q) * cx.row_sizes[static_cast<size_t>(i)],
              "step: agent state has wrong y dimension");
  }
}

// Validates agent i's inbox for the scheduled round and returns per-neighbor
// payload pointers in ascending sender order.
std::vector<const double*> scheduled_payload_ptrs(const ProtocolContext& cx,
                                                  const std::vector<PortionMessage>& inbox,
                                                  int i, int sched_j) {
  const auto& nbrs = cx.nb[static_cast<size_t>(i)];
  require(inbox.size() == nbrs.size(), "step: inbox of agent " + std::to_string(i + 1) +
                                           " must hold exactly one message per neighbor");
  const int nj = cx.col_sizes[static_cast<size_t>(sched_j)];
  std::vector<const double*> ptrs(nbrs.size(), nullptr);
  for (const PortionMessage& msg : inbox) {
    require(msg.portion == sched_j + 1,
            "step: message carries portion " + std::to_string(msg.portion) +
                " instead of the scheduled portion " + std::to_string(sched_j + 1));
    require(msg.payload.size() == nj, "step: message payload has wrong dimension");
    const auto it = std::find(nbrs.begin(), nbrs.end(), msg.sender - 1);
    require(it != nbrs.end(),
            "step: message from non-neighbor agent " + std::to_string(msg.sender));
    const size_t idx = static_cast<size_t>(it - nbrs.begin());
    require(ptrs[idx] == nullptr, "step: duplicate message from agent " + std::to_string(msg.sender));
    ptrs[idx] = msg.payload.data();
  }
  return ptrs;
}

}  // namespace

void step_portioned_inplace(const ProtocolContext& cx, const AgentState& prev,
                            long long k, bool all_scheduled, const Gains& gains,
                            const std::vector<std::vector<Vector>>* delta_b,
                            int agent_begin, int agent_end, AgentState& next,
                            StepScratch& scratch) {
  const int sched_j = scheduled_portion(k, cx.q) - 1;
  for (int i = agent_begin; i < agent_end; ++i) {
    const auto& nbrs = cx.nb[static_cast<size_t>(i)];
    auto payload = [&](int l_idx, int j) {
      return prev.x[static_cast<size_t>(nbrs[static_cast<size_t>(l_idx)])].data() +
             cx.col_offsets[static_cast<size_t>(j)];
    };
    const std::vector<Vector>* delta_i =
        delta_b ? &(*delta_b)[static_cast<size_t>(i)] : nullptr;
    update_agent_portioned(cx, prev, i, sched_j, all_scheduled, gains, delta_i, payload,
                           next, scratch);
  }
}

AgentState step_sdls(const ProtocolContext& cx, const AgentState& state,
                     const std::vector<std::vector<PortionMessage>>& inboxes,
                     const Gains& gains, long long k) {
  gains.validate();
  require(gains.alpha > 0.0, "step: alpha must be strictly positive");
  validate_state(cx, state, true);
  require(static_cast<int>(inboxes.size()) == cx.p, "step: need one inbox per agent");
  const int sched_j = scheduled_portion(k, cx.q) - 1;
  AgentState next = shaped_like(state);
  StepScratch scratch;
  scratch.resize_for(cx);
  for (int i = 0; i < cx.p; ++i) {
    const auto ptrs = scheduled_payload_ptrs(cx, inboxes[static_cast<size_t>(i)], i, sched_j);
    auto payload = [&](int l_idx, int) { return ptrs[static_cast<size_t>(l_idx)]; };
    update_agent_portioned(cx, state, i, sched_j, false, gains, nullptr, payload, next,
                           scratch);
  }
  return next;
}

AgentState step_full(const ProtocolContext& cx, const AgentState& state,
                     const std::vector<std::vector<PortionMessage>>& inboxes,
                     const Gains& gains) {
  gains.validate();
  require(gains.alpha > 0.0, "step: alpha must be strictly positive");
  validate_state(cx, state, true);
  require(static_cast<int>(inboxes.size()) == cx.p, "step: need one inbox per agent");
  AgentState next = shaped_like(state);
  StepScratch scratch;
  scratch.resize_for(cx);
  for (int i = 0; i < cx.p; ++i) {
    const auto& nbrs = cx.nb[static_cast<size_t>(i)];
    const auto& box = inboxes[static_cast<size_t>(i)];
    require(box.size() == nbrs.size() * static_cast<size_t>(cx.q),
            "step_full: inbox must hold every portion from every neighbor");
    // payload pointer per (neighbor, portion)
    std::vector<const double*> ptrs(nbrs.size() * static_cast<size_t>(cx.q), nullptr);
    for (const PortionMessage& msg : box) {
      const auto it = std::find(nbrs.begin(), nbrs.end(), msg.sender - 1);
      require(it != nbrs.end(),
              "step_full: message from non-neighbor agent " + std::to_string(msg.sender));
      require(msg.portion >= 1 && msg.portion <= cx.q, "step_full: bad portion index");
      const int nj = cx.col_sizes[static_cast<size_t>(msg.portion - 1)];
      require(msg.payload.size() == nj, "step_full: message payload has wrong dimension");
      const size_t idx = static_cast<size_t>(it - nbrs.begin()) * static_cast<size_t>(cx.q) +
                         static_cast<size_t>(msg.portion - 1);
      require(ptrs[idx] == nullptr, "step_full: duplicate message");
      ptrs[idx] = msg.payload.data();
    }
    for (const double* ptr : ptrs)
      require(ptr != nullptr, "step_full: a neighbor portion is missing from the inbox");
    auto payload = [&](int l_idx, int j) {
      return ptrs[static_cast<size_t>(l_idx) * static_cast<size_t>(cx.q) +
                  static_cast<size_t>(j)];
    };
    update_agent_portioned(cx, state, i, /*sched_j=*/0, /*all_scheduled=*/true, gains,
                           nullptr, payload, next, scratch);
  }
  return next;
}

AgentState step_tracking(const ProtocolContext& cx, const AgentState& state,
                         const std::vector<std::vector<PortionMessage>>& inboxes,
                         const Gains& gains, long long k,
                         const std::vector<std::vector<Vector>>& delta_b) {
  gains.validate();
  require(gains.alpha > 0.0, "step: alpha must be strictly positive");
  validate_state(cx, state, true);
  require(static_cast<int>(inboxes.size()) == cx.p, "step: need one inbox per agent");
  require(static_cast<int>(delta_b.size()) == cx.p,
          "step_tracking: delta_b must have one entry per agent");
  for (int i = 0; i < cx.p; ++i) {
    require(static_cast<int>(delta_b[static_cast<size_t>(i)].size()) == cx.q,
            "step_tracking: delta_b must have one increment per portion");
    for (const Vector& d : delta_b[static_cast<size_t>(i)])
      require(d.size() == cx.row_sizes[static_cast<size_t>(i)],
              "step_tracking: delta_b increment has wrong dimension");
  }
  const int sched_j = scheduled_portion(k, cx.q) - 1;
  AgentState next = shaped_like(state);
  StepScratch scratch;
  scratch.resize_for(cx);
  for (int i = 0; i < cx.p; ++i) {
    const auto ptrs = scheduled_payload_ptrs(cx, inboxes[static_cast<size_t>(i)], i, sched_j);
    auto payload = [&](int l_idx, int) { return ptrs[static_cast<size_t>(l_idx)]; };
    update_agent_portioned(cx, state, i, sched_j, false, gains,
                           &delta_b[static_cast<size_t>(i)], payload, next, scratch);
  }
  return next;
}

AgentState init_baseline(const ProtocolContext& cx, BaselineKind kind) {
  if (kind == BaselineKind::double_layer) return init_agents(cx);
  AgentState st;
  st.x.assign(static_cast<size_t>(cx.p), Vector::Zero(cx.n));
  st.z.assign(static_cast<size_t>(cx.p), Vector::Zero(cx.n));
  st.y.assign(static_cast<size_t>(cx.p), Vector());
  if (kind == BaselineKind::gradient_tracking) {
    // z tracks the local gradient; at x = 0 that is -A_i^T b_i.
    for (int i = 0; i < cx.p; ++i)
      st.z[static_cast<size_t>(i)] =
          -(cx.a_i[static_cast<size_t>(i)].transpose() * cx.b_i[static_cast<size_t>(i)]);
  }
  return st;
}

void step_baseline_inplace(const ProtocolContext& cx, BaselineKind kind,
                           const AgentState& prev, const Gains& gains, double beta,
                           int agent_begin, int agent_end, AgentState& next,
                           StepScratch& scratch) {
  if (beta <= 0.0) beta = gains.alpha;
  for (int i = agent_begin; i < agent_end; ++i) {
    const auto& nbrs = cx.nb[static_cast<size_t>(i)];
    auto x_of = [&](int t) { return prev.x[static_cast<size_t>(nbrs[static_cast<size_t>(t)])].data(); };
    auto z_of = [&](int t) { return prev.z[static_cast<size_t>(nbrs[static_cast<size_t>(t)])].data(); };
    update_agent_baseline(cx, kind, prev, i, gains, beta, x_of, z_of, next, scratch);
  }
}

AgentState step_baseline(const ProtocolContext& cx, BaselineKind kind,
                         const AgentState& state,
                         const std::vector<std::vector<BaselineMessage>>& inboxes,
                         const Gains& gains, double beta) {
  gains.validate();
  require(gains.alpha > 0.0, "step: alpha must be strictly positive");
  validate_state(cx, state, kind == BaselineKind::double_layer);
  require(static_cast<int>(inboxes.size()) == cx.p, "step: need one inbox per agent");
  if (beta <= 0.0) beta = gains.alpha;
  AgentState next = shaped_like(state);
  StepScratch scratch;
  scratch.resize_for(cx);
  for (int i = 0; i < cx.p; ++i) {
    const auto& nbrs = cx.nb[static_cast<size_t>(i)];
    const auto& box = inboxes[static_cast<size_t>(i)];
    require(box.size() == nbrs.size(),
            "step_baseline: inbox must hold exactly one message per neighbor");
    std::vector<const double*> xp(nbrs.size(), nullptr), zp(nbrs.size(), nullptr);
    for (const BaselineMessage& msg : box) {
      const auto it = std::find(nbrs.begin(), nbrs.end(), msg.sender - 1);
      require(it != nbrs.end(),
              "step_baseline: message from non-neighbor agent " + std::to_string(msg.sender));
      const size_t idx = static_cast<size_t>(it - nbrs.begin());
      require(xp[idx] == nullptr, "step_baseline: duplicate message");
      require(msg.x.size() == cx.n && msg.z.size() == cx.n,
              "step_baseline: message payload has wrong dimension");
      xp[idx] = msg.x.data();
      zp[idx] = msg.z.data();
    }
    auto x_of = [&](int t) { return xp[static_cast<size_t>(t)]; };
    auto z_of = [&](int t) { return zp[static_cast<size_t>(t)]; };
    update_agent_baseline(cx, kind, state, i, gains, beta, x_of, z_of, next, scratch);
  }
  return next;
}

std::vector<Vector> lowpass_prefilter(const std::vector<Vector>& b_stream, double beta) {
  require(beta > 0.0 && beta <= 1.0, "lowpass_prefilter: beta must lie in (0, 1]");
  std::vector<Vector> out;
  out.reserve(b_stream.size());
  for (size_t k = 0; k < b_stream.size(); ++k) {
    if (k == 0)
      out.push_back(b_stream[0]);
    else
      out.push_back((1.0 - beta) * out.back() + beta * b_stream[k]);
  }
  return out;
}

void save_agent_state(const std::string& dir, const ProtocolContext& cx,
                      const AgentState& state) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  char name[64];
  for (int i = 0; i < cx.p; ++i) {
    std::snprintf(name, sizeof(name), "agent%02d_x.mat", i + 1);
    write_matrix((fs::path(dir) / name).string(), state.x[static_cast<size_t>(i)]);
    std::snprintf(name, sizeof(name), "agent%02d_y.mat", i + 1);
    write_matrix((fs::path(dir) / name).string(), state.y[static_cast<size_t>(i)]);
    std::snprintf(name, sizeof(name), "agent%02d_z.mat", i + 1);
    write_matrix((fs::path(dir) / name).string(), state.z[static_cast<size_t>(i)]);
  }
}

}  // namespace dlsq
