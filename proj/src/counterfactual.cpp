#include "intentcheck/counterfactual.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <map>
#include <thread>

#include "intentcheck/log.hpp"

namespace intentcheck::cf {

namespace {

constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

std::uint64_t splitmix64(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace

std::uint64_t CounterRng::next() {
    ++counter_;
    return splitmix64(seed_ + counter_ * kGoldenGamma);
}

std::uint64_t CounterRng::uniform(std::uint64_t bound) {
    if (bound == 0) throw Error("uniform draw needs a positive bound");
    // Reject the low residue class so every value has the same number of preimages.
    const std::uint64_t threshold = (0 - bound) % bound;
    while (true) {
        const std::uint64_t r = next();
        if (r >= threshold) return r % bound;
    }
}

VariableSpec VariableSpec::frozen_at_reference(std::string name) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = Kind::frozen;
    return v;
}

VariableSpec VariableSpec::within_epsilon(std::string name, std::int32_t epsilon, std::int32_t granularity) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = Kind::epsilon;
    v.epsilon = epsilon;
    v.granularity = granularity;
    return v;
}

VariableSpec VariableSpec::closed_range(std::string name, std::int32_t lo, std::int32_t hi, std::int32_t granularity) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = Kind::range;
    v.lo = lo;
    v.hi = hi;
    v.granularity = granularity;
    return v;
}

VariableSpec VariableSpec::value_set(std::string name, std::vector<std::int32_t> values) {
    VariableSpec v;
    v.name = std::move(name);
    v.kind = Kind::values;
    v.values = std::move(values);
    return v;
}

void CounterfactualSpec::validate() const {
    if (batch_size == 0) throw SpecError("batch size must be at least 1");
    if (trace_limit < batch_size) throw SpecError("trace limit must be at least the batch size");
    for (const auto& v : variables) {
        if (v.name.empty()) throw SpecError("counterfactual variable without a name");
        if (v.granularity <= 0) throw SpecError("granularity of '" + v.name + "' must be positive");
        if (v.kind == VariableSpec::Kind::epsilon && v.epsilon < 0) {
            throw SpecError("epsilon of '" + v.name + "' must be non-negative");
        }
        if (v.kind == VariableSpec::Kind::range && v.lo > v.hi) {
            throw SpecError("range of '" + v.name + "' is empty");
        }
    }
}

std::vector<std::vector<std::int32_t>> admissible_sets(const CounterfactualSpec& spec,
                                                       const mdp::VariableSchema& schema,
                                                       const std::vector<std::int32_t>& reference_integral) {
    spec.validate();
    const auto positions = schema.positions(mdp::VariableKind::integral);
    if (reference_integral.size() != positions.size()) {
        throw SpecError("reference assignment has " + std::to_string(reference_integral.size()) +
                        " values for " + std::to_string(positions.size()) + " integral variables");
    }
    std::vector<std::vector<std::int32_t>> sets(positions.size());
    for (std::size_t i = 0; i < positions.size(); ++i) sets[i] = {reference_integral[i]};

    std::vector<bool> seen(positions.size(), false);
    for (const auto& v : spec.variables) {
        const auto where = schema.index_of(v.name);
        if (!where) throw SpecError("unknown counterfactual variable '" + v.name + "'");
        const auto it = std::find(positions.begin(), positions.end(), *where);
        if (it == positions.end()) throw SpecError("'" + v.name + "' is not an integral variable");
        const auto slot = static_cast<std::size_t>(it - positions.begin());
        if (seen[slot]) throw SpecError("'" + v.name + "' is specified twice");
        seen[slot] = true;

        const mdp::Domain& domain = schema[*where].domain;
        const std::int32_t ref = reference_integral[slot];
        std::vector<std::int32_t> values;
        switch (v.kind) {
            case VariableSpec::Kind::frozen: values = {ref}; break;
            case VariableSpec::Kind::epsilon:
                if (v.epsilon == 0) {
                    values = {ref};
                    break;
                }
                // Grid anchored at the reference value, strict distance bound.
                for (std::int32_t k = -(v.epsilon - 1) / v.granularity; k * v.granularity < v.epsilon; ++k) {
                    const std::int32_t y = ref + k * v.granularity;
                    if (domain.contains(y)) values.push_back(y);
                }
                break;
            case VariableSpec::Kind::range:
                for (std::int32_t y = v.lo; y <= v.hi; y += v.granularity) {
                    if (!domain.contains(y)) {
                        throw SpecError("value " + std::to_string(y) + " of '" + v.name + "' is outside its domain");
                    }
                    values.push_back(y);
                }
                break;
            case VariableSpec::Kind::values:
                for (std::int32_t y : v.values) {
                    if (!domain.contains(y)) {
                        throw SpecError("value " + std::to_string(y) + " of '" + v.name + "' is outside its domain");
                    }
                }
                values = v.values;
                std::sort(values.begin(), values.end());
                values.erase(std::unique(values.begin(), values.end()), values.end());
                break;
        }
        if (values.empty()) throw SpecError("admissible set of '" + v.name + "' is empty");
        sets[slot] = std::move(values);
    }
    return sets;
}

std::vector<std::int32_t> sample_cf_values(const std::vector<std::vector<std::int32_t>>& admissible,
                                           CounterRng& rng) {
    std::vector<std::int32_t> out;
    out.reserve(admissible.size());
    for (const auto& values : admissible) {
        if (values.empty()) throw SpecError("empty admissible set");
        out.push_back(values.size() == 1 ? values.front() : values[rng.uniform(values.size())]);
    }
    return out;
}

std::vector<std::int32_t> sample_cf_values(const CounterfactualSpec& spec, const mdp::VariableSchema& schema,
                                           const std::vector<std::int32_t>& reference_integral, CounterRng& rng) {
    return sample_cf_values(admissible_sets(spec, schema, reference_integral), rng);
}

std::string to_string(Rejection::Reason reason) {
    switch (reason) {
        case Rejection::Reason::unreachable: return "unreachable";
        case Rejection::Reason::invalid_step: return "invalid-step";
        case Rejection::Reason::not_in_target: return "not-ending-in-target";
    }
    return "?";
}

std::string describe(const Rejection& rejection) {
    return to_string(rejection.reason) + " at index " + std::to_string(rejection.index);
}

LiftResult lift_trace(const std::vector<mdp::FactoredState>& reference_states,
                      const std::vector<std::int32_t>& assignment, const mdp::FactoredMdp& cf_mdp,
                      const reach::TargetSet& target) {
    if (reference_states.empty()) throw ValidationError("cannot lift an empty trace");
    const mdp::VariableSchema& schema = cf_mdp.schema();
    std::vector<mdp::StateId> ids;
    ids.reserve(reference_states.size());
    for (std::size_t i = 0; i < reference_states.size(); ++i) {
        mdp::SplitState parts = mdp::split_state(reference_states[i], schema);
        parts.integral = assignment;
        const auto id = cf_mdp.find(mdp::recompose(parts, schema));
        if (!id) return Rejection{Rejection::Reason::unreachable, i};
        if (i > 0 && !mdp::is_valid_trace(cf_mdp, mdp::Trace({ids.back(), *id}))) {
            return Rejection{Rejection::Reason::invalid_step, i};
        }
        ids.push_back(*id);
    }
    if (!target.contains(ids.back())) return Rejection{Rejection::Reason::not_in_target, ids.size() - 1};
    return mdp::Trace(std::move(ids));
}

Aggregate aggregate(const std::vector<intention::TraceAssessment>& assessments) {
    if (assessments.empty()) throw Error("cannot aggregate an empty trace set");
    Aggregate out;
    double sigma_sum = 0.0;
    double rho_sum = 0.0;
    std::size_t rho_count = 0;
    for (const auto& a : assessments) {
        sigma_sum += a.sigma;
        if (a.rho) {
            rho_sum += *a.rho;
            ++rho_count;
        } else {
            ++out.undefined_rho;
        }
    }
    out.sigma = sigma_sum / static_cast<double>(assessments.size());
    if (rho_count > 0) out.rho = rho_sum / static_cast<double>(rho_count);
    return out;
}

std::string to_string(StopReason reason) {
    return reason == StopReason::verdict_reached ? "verdict-reached" : "limit-exhausted";
}

std::vector<intention::TraceAssessment> EvidenceLog::assessments() const {
    std::vector<intention::TraceAssessment> out;
    out.reserve(entries.size());
    for (const auto& e : entries) out.push_back(e.assessment);
    return out;
}

namespace {

/// Outcome of analyzing one candidate scenario for a set of agents.
struct Evaluated {
    std::vector<std::int32_t> integral;
    bool accepted = false;
    /// Indexed by agent; empty for agents not requested.
    std::vector<std::optional<intention::TraceAssessment>> per_agent;
};

struct Analyzer {
    const ProblemBuilder& builder;
    const std::vector<mdp::FactoredState>& reference_states;
    const std::vector<PolicyBuilder>& agents;
    const LoopOptions& options;

    /// Solves one assignment. Agents whose flag is false are skipped.
    Evaluated run(const std::vector<std::int32_t>& integral, const std::vector<char>& wanted,
                  std::optional<double>* sigma_out = nullptr) const {
        Evaluated out;
        out.integral = integral;
        out.per_agent.resize(agents.size());
        const Problem problem = builder(integral);
        const LiftResult lifted = lift_trace(reference_states, integral, problem.mdp, problem.target);
        if (const auto* rejection = std::get_if<Rejection>(&lifted)) {
            spdlog::debug("counterfactual rejected: {}", describe(*rejection));
            return out;
        }
        out.accepted = true;
        const mdp::Trace& trace = std::get<mdp::Trace>(lifted);
        const auto& solver = options.solver;
        auto p_min = reach::reach_extremal(problem.mdp, problem.policy_class, problem.target, reach::Mode::min, solver);
        auto p_max = reach::reach_extremal(problem.mdp, problem.policy_class, problem.target, reach::Mode::max, solver);
        if (sigma_out) {
            double sum = 0.0;
            for (mdp::StateId id : trace.states()) sum += std::max(0.0, p_max[id] - p_min[id]);
            *sigma_out = sum / static_cast<double>(trace.size());
        }
        for (std::size_t a = 0; a < agents.size(); ++a) {
            if (!wanted[a]) continue;
            const mdp::Policy policy = agents[a](problem.mdp);
            intention::ReachTriple triple{p_min, p_max, reach::reach_under_policy(problem.mdp, policy, problem.target, solver)};
            out.per_agent[a] = intention::assess_with(triple, trace, options.thresholds, solver.tolerance);
        }
        return out;
    }
};

std::uint64_t candidate_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + kGoldenGamma));
}

/// Runs f(i) for i in [0, n) on up to `threads` workers; rethrows the first failure by index.
template <typename F>
void parallel_for(std::size_t n, unsigned threads, F&& f) {
    if (threads <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) f(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(threads, n));
    for (unsigned w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    f(i);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

}  // namespace

std::vector<EvidenceLog> evidence_loop_multi(const mdp::VariableSchema& schema, const ProblemBuilder& builder,
                                             const std::vector<mdp::FactoredState>& reference_states,
                                             const std::vector<PolicyBuilder>& agents,
                                             const CounterfactualSpec& spec, const LoopOptions& options) {
    spec.validate();
    options.thresholds.validate();
    if (agents.empty()) throw Error("evidence loop needs at least one agent");
    if (reference_states.empty()) throw ValidationError("reference trace is empty");

    const std::vector<std::int32_t> reference_integral = mdp::split_state(reference_states.front(), schema).integral;
    for (std::size_t i = 1; i < reference_states.size(); ++i) {
        if (mdp::split_state(reference_states[i], schema).integral != reference_integral) {
            throw ValidationError("reference state " + std::to_string(i) + " changes an integral variable");
        }
    }
    const auto admissible = admissible_sets(spec, schema, reference_integral);
    const bool singleton =
        std::all_of(admissible.begin(), admissible.end(), [](const auto& values) { return values.size() == 1; });
    const unsigned threads = spec.threads == 0 ? std::max(1U, std::thread::hardware_concurrency()) : spec.threads;

    const Analyzer analyzer{builder, reference_states, agents, options};
    std::vector<char> active(agents.size(), 1);
    std::vector<EvidenceLog> logs(agents.size());

    Evaluated reference = analyzer.run(reference_integral, active);
    if (!reference.accepted) {
        const Problem problem = builder(reference_integral);
        const LiftResult lifted = lift_trace(reference_states, reference_integral, problem.mdp, problem.target);
        const auto* rejection = std::get_if<Rejection>(&lifted);
        throw ValidationError("reference trace is not analyzable: " +
                              (rejection ? describe(*rejection) : std::string("unknown reason")));
    }
    std::uint64_t draws = 0;
    std::uint64_t rejections = 0;
    auto refresh = [&](std::size_t a) {
        EvidenceLog& log = logs[a];
        log.aggregate = aggregate(log.assessments());
        log.verdict = intention::classify(log.aggregate.rho, log.aggregate.sigma, options.thresholds);
        log.draws = draws;
        log.rejections = rejections;
        if (intention::is_conclusive(log.verdict)) {
            log.stop_reason = StopReason::verdict_reached;
            active[a] = 0;
        }
    };
    for (std::size_t a = 0; a < agents.size(); ++a) {
        logs[a].entries.push_back(LogEntry{reference_integral, true, *reference.per_agent[a]});
        refresh(a);
    }

    // Candidates are indexed globally so the sequence does not depend on the thread count.
    // Evaluated but unconsumed candidates are kept for the next batch.
    const std::uint32_t per_sample = std::max<std::uint32_t>(1, spec.high_sigma_candidates);
    std::uint64_t cursor = 0;
    std::map<std::uint64_t, Evaluated> pending;
    std::size_t counterfactuals = 0;

    auto evaluate_sample = [&](std::uint64_t index, const std::vector<char>& wanted) {
        if (per_sample == 1) {
            CounterRng rng(candidate_seed(spec.seed, index));
            return analyzer.run(sample_cf_values(admissible, rng), wanted);
        }
        // Keep the accepted candidate with the largest trace scope of agency.
        std::optional<std::vector<std::int32_t>> best;
        double best_sigma = -1.0;
        const std::vector<char> none(agents.size(), 0);
        for (std::uint32_t c = 0; c < per_sample; ++c) {
            CounterRng rng(candidate_seed(spec.seed, index * per_sample + c));
            auto values = sample_cf_values(admissible, rng);
            std::optional<double> sigma;
            if (analyzer.run(values, none, &sigma).accepted && *sigma > best_sigma) {
                best_sigma = *sigma;
                best = std::move(values);
            }
        }
        if (!best) return Evaluated{{}, false, std::vector<std::optional<intention::TraceAssessment>>(agents.size())};
        return analyzer.run(*best, wanted);
    };

    while (std::any_of(active.begin(), active.end(), [](char c) { return c != 0; }) &&
           counterfactuals < spec.trace_limit) {
        const std::size_t need = std::min<std::size_t>(spec.batch_size, spec.trace_limit - counterfactuals);
        const std::uint64_t max_draws = 1000ULL * need;
        std::vector<Evaluated> batch;
        std::uint64_t batch_draws = 0;
        while (batch.size() < need) {
            if (batch_draws >= max_draws) {
                throw SamplingError("could not fill a batch of " + std::to_string(need) + " counterfactuals in " +
                                    std::to_string(batch_draws) + " draws (acceptance rate " +
                                    std::to_string(static_cast<double>(batch.size()) / batch_draws) + ")");
            }
            const std::size_t chunk = std::max<std::size_t>(need - batch.size(), threads);
            std::vector<std::uint64_t> todo;
            for (std::uint64_t k = cursor; todo.size() < chunk; ++k) {
                if (!pending.count(k)) todo.push_back(k);
            }
            std::vector<Evaluated> results(todo.size());
            parallel_for(todo.size(), threads,
                         [&](std::size_t i) { results[i] = evaluate_sample(todo[i], active); });
            for (std::size_t i = 0; i < todo.size(); ++i) pending.emplace(todo[i], std::move(results[i]));
            // Consume in index order.
            while (batch.size() < need && pending.count(cursor)) {
                Evaluated e = std::move(pending.at(cursor));
                pending.erase(cursor);
                ++cursor;
                ++batch_draws;
                draws += per_sample;
                if (e.accepted) {
                    batch.push_back(std::move(e));
                } else {
                    ++rejections;
                }
            }
        }
        counterfactuals += batch.size();
        for (std::size_t a = 0; a < agents.size(); ++a) {
            if (!active[a]) continue;
            for (auto& e : batch) logs[a].entries.push_back(LogEntry{e.integral, false, *e.per_agent[a]});
            refresh(a);
        }
        spdlog::info("evidence loop: {} counterfactual traces analyzed", counterfactuals);
        if (singleton) break;
    }
    return logs;
}

EvidenceLog evidence_loop(const mdp::VariableSchema& schema, const ProblemBuilder& builder,
                          const std::vector<mdp::FactoredState>& reference_states, const PolicyBuilder& agent,
                          const CounterfactualSpec& spec, const LoopOptions& options) {
    return evidence_loop_multi(schema, builder, reference_states, {agent}, spec, options).front();
}

}  // namespace intentcheck::cf
