#include "flowsculpt/solver.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "flowsculpt/documents.hpp"
#include "flowsculpt/errors.hpp"

namespace flowsculpt {

namespace {

// Earliest prefix with the highest PMR along the trajectory.
PillarSequence best_prefix(const EnvConfig& env, const FlowShape& target, const PillarSequence& seq) {
  const auto shapes = apply_sequence(env.inlet, seq, *env.library);
  std::size_t best_len = 1;
  double best = -1.0;
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const double p = pmr(shapes[k], target);
    if (p > best) {
      best = p;
      best_len = k + 1;
    }
  }
  return PillarSequence(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(std::min(best_len, seq.size())));
}

bool ranks_before(const Candidate& a, const Candidate& b) {
  if (a.pmr != b.pmr) return a.pmr > b.pmr;
  if (a.sequence.size() != b.sequence.size()) return a.sequence.size() < b.sequence.size();
  return a.sequence < b.sequence;
}

}  // namespace

Candidate verify_candidate(const EnvConfig& env, const FlowShape& target, const PillarSequence& seq) {
  Candidate c;
  c.sequence = seq;
  c.shapes = apply_sequence(env.inlet, seq, *env.library);
  c.pmr = pmr(c.shapes.empty() ? env.inlet : c.shapes.back(), target);
  c.success = c.pmr >= env.pmr_threshold;
  return c;
}

std::vector<Candidate> suggest(const FrozenPolicy& policy, const EnvConfig& env, const FlowShape& target,
                               const SolveOptions& options) {
  if (options.k < 1) throw ParameterError("k must be at least 1");
  if (policy.architecture().input != env.grid()) throw CheckpointError("checkpoint grid does not match the library");
  if (policy.output_size() != env.action_count()) throw CheckpointError("checkpoint action count does not match the library");
  reset(env, target);

  std::vector<PillarSequence> raw;

  // Greedy beam: follow the argmax, branching wherever several actions tie exactly.
  std::function<void(EnvState)> beam = [&](EnvState state) {
    if (static_cast<int>(raw.size()) >= options.max_tie_branches) return;
    if (state.done) {
      raw.push_back(state.action_history);
      return;
    }
    const Vector<double> q = policy.q_values(state.current);
    const double best = q.maxCoeff();
    for (Eigen::Index a = 0; a < q.size(); ++a) {
      if (q(a) != best) continue;
      EnvState next = state;
      step(next, static_cast<int>(a), env);
      beam(std::move(next));
    }
  };
  beam(reset(env, target));

  std::set<PillarSequence> seen;
  std::vector<Candidate> out;
  auto consider = [&](const PillarSequence& seq) {
    if (seq.empty()) return;
    const PillarSequence cut = best_prefix(env, target, seq);
    if (seen.insert(cut).second) out.push_back(verify_candidate(env, target, cut));
  };
  for (const auto& seq : raw) consider(seq);

  const int attempts = 4 * (options.k - 1);
  for (int i = 0; i < attempts && static_cast<int>(out.size()) < options.k; ++i) {
    Rng rng(mix_seed(options.seed, static_cast<std::uint64_t>(i)));
    const auto r = rollout(env, target, [&](const FlowShape& obs) {
      if (rng.uniform01() < options.exploration) {
        return static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(env.action_count())));
      }
      return policy.greedy(obs);
    });
    consider(r.final_state.action_history);
  }

  std::sort(out.begin(), out.end(), ranks_before);
  if (static_cast<int>(out.size()) > options.k) out.resize(static_cast<std::size_t>(options.k));
  return out;
}

nlohmann::ordered_json suggestions_to_json(const std::vector<Candidate>& candidates) {
  nlohmann::ordered_json list = nlohmann::ordered_json::array();
  for (const auto& c : candidates) {
    nlohmann::ordered_json shapes = nlohmann::ordered_json::array();
    for (const auto& s : c.shapes) shapes.push_back(shape_to_json(s));
    list.push_back({{"sequence", c.sequence}, {"shapes", std::move(shapes)}, {"pmr", c.pmr}, {"success", c.success}});
  }
  return {{"candidates", std::move(list)}};
}

}  // namespace flowsculpt
