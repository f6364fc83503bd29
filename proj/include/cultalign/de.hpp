#pragma once

// Differential evolution over bounded soft-prompt matrices: current-to-best/1
// mutation with box clamping, binomial crossover with one forced component,
// and one-to-one greedy selection.

#include "cultalign/error.hpp"
#include "cultalign/parallel.hpp"
#include "cultalign/soft_prompt.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace cultalign::de {

struct DEConfig {
    int population_size = 7;
    int max_generations = 50;
    double mutation_rate = 0.9;
    double recombination_rate = 0.9;
    double lower_bound = -5.0;
    double upper_bound = 5.0;
    double abs_tolerance = 1e-9;
    std::uint64_t rng_seed = 42;
    int workers = 1;

    std::vector<std::string> diagnostics() const
    {
        std::vector<std::string> out;
        if (population_size < 4)
            out.emplace_back("population_size must be ≥ 4");
        if (max_generations < 1)
            out.emplace_back("max_generations must be ≥ 1");
        if (!(mutation_rate > 0.0) || !std::isfinite(mutation_rate))
            out.emplace_back("mutation_rate must be > 0");
        if (!(recombination_rate >= 0.0 && recombination_rate <= 1.0))
            out.emplace_back("recombination_rate must be in [0, 1]");
        if (!(lower_bound < upper_bound) || !std::isfinite(lower_bound) || !std::isfinite(upper_bound))
            out.emplace_back("lower_bound must be < upper_bound");
        if (!(abs_tolerance >= 0.0))
            out.emplace_back("abs_tolerance must be ≥ 0");
        if (workers < 1)
            out.emplace_back("workers must be ≥ 1");
        return out;
    }

    void validate() const
    {
        const auto problems = diagnostics();
        if (!problems.empty())
            throw Error(ErrorKind::ConfigError, problems.front());
    }
};

inline constexpr double kUnevaluated = std::numeric_limits<double>::quiet_NaN();

template <typename Scalar>
struct Population {
    std::vector<SoftPrompt<Scalar>> members;
    std::vector<double> fitnesses;
    int best_index = 0;
    int generation = 0;

    std::size_t size() const { return members.size(); }

    /// Lowest index wins ties.
    void update_best()
    {
        best_index = 0;
        for (std::size_t i = 1; i < fitnesses.size(); ++i)
            if (fitnesses[i] < fitnesses[std::size_t(best_index)])
                best_index = int(i);
    }

    const SoftPrompt<Scalar>& best() const { return members.at(std::size_t(best_index)); }
    double best_fitness() const { return fitnesses.at(std::size_t(best_index)); }
};

struct GenerationRecord {
    int generation = 0;
    double best_fitness = 0.0;
    double mean_fitness = 0.0;
    std::string best_member_digest;
};

template <typename Scalar>
struct EvolveResult {
    SoftPrompt<Scalar> best;
    double best_fitness = 0.0;
    double initial_best_fitness = 0.0;
    std::vector<GenerationRecord> history;
    Population<Scalar> population;
    bool converged = false;
    std::size_t evaluations = 0;
};

/// Independent stream per (seed, generation, member), so results do not depend
/// on how members are scheduled across workers.
inline std::mt19937_64 member_stream(std::uint64_t seed, std::uint64_t generation, std::uint64_t member)
{
    std::seed_seq seq{std::uint32_t(seed), std::uint32_t(seed >> 32), std::uint32_t(generation),
                      std::uint32_t(generation >> 32), std::uint32_t(member), std::uint32_t(member >> 32)};
    return std::mt19937_64(seq);
}

namespace detail {

template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw Error(ErrorKind::ShapeMismatch, std::string(what) + ": " + std::to_string(a.rows()) + "x"
                                                  + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x"
                                                  + std::to_string(b.cols()));
}

} // namespace detail

/// v = x_t + beta * (x_best - x_t + b - c), clamped to the box.
template <typename DT, typename DBest, typename DB, typename DC>
SoftPrompt<typename DT::Scalar> mutate(const Eigen::MatrixBase<DT>& target, const Eigen::MatrixBase<DBest>& best,
                                       const Eigen::MatrixBase<DB>& b, const Eigen::MatrixBase<DC>& c,
                                       const DEConfig& cfg)
{
    using Scalar = typename DT::Scalar;
    detail::require_same_shape(target, best, "mutate(best)");
    detail::require_same_shape(target, b, "mutate(b)");
    detail::require_same_shape(target, c, "mutate(c)");
    const auto beta = static_cast<Scalar>(cfg.mutation_rate);
    SoftPrompt<Scalar> v = target + beta * (best - target + b - c);
    return v.cwiseMax(static_cast<Scalar>(cfg.lower_bound)).cwiseMin(static_cast<Scalar>(cfg.upper_bound));
}

/// Binomial crossover over the flattened (row-major) components. One index R,
/// drawn uniformly, always takes the mutant's component; `forced_index`
/// receives it when non-null.
template <typename DT, typename DM, typename Rng>
SoftPrompt<typename DT::Scalar> crossover(const Eigen::MatrixBase<DT>& target, const Eigen::MatrixBase<DM>& mutant,
                                          const DEConfig& cfg, Rng& rng, Eigen::Index* forced_index = nullptr)
{
    detail::require_same_shape(target, mutant, "crossover");
    SoftPrompt<typename DT::Scalar> trial = target;
    const SoftPrompt<typename DT::Scalar> donor = mutant;
    const Eigen::Index n = trial.size();
    if (n == 0)
        return trial;

    std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Index forced = pick(rng);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double r = unit(rng);
        if (r < cfg.recombination_rate || i == forced)
            trial.data()[i] = donor.data()[i];
    }
    if (forced_index)
        *forced_index = forced;
    return trial;
}

enum class Choice { Trial, Target };

/// Strict improvement only; ties keep the incumbent.
inline Choice select(double target_fitness, double trial_fitness)
{
    return trial_fitness < target_fitness ? Choice::Trial : Choice::Target;
}

/// Two distinct indices, uniformly without replacement from [0, n) \ {target}.
template <typename Rng>
std::pair<int, int> pick_donors(Rng& rng, int n, int target)
{
    std::uniform_int_distribution<int> first(0, n - 2);
    int b = first(rng);
    if (b >= target)
        ++b;
    std::uniform_int_distribution<int> second(0, n - 3);
    int c = second(rng);
    // skip target and b in increasing order
    const int lo = std::min(b, target);
    const int hi = std::max(b, target);
    if (c >= lo)
        ++c;
    if (c >= hi)
        ++c;
    return {b, c};
}

/// Seeds first, then uniform random members in the box until N exist.
/// Fitnesses are left at the unevaluated sentinel.
template <typename Scalar = double>
Population<Scalar> init_population(const DEConfig& cfg, Eigen::Index tokens, Eigen::Index dim,
                                   std::span<const SoftPrompt<Scalar>> seeds = {})
{
    cfg.validate();
    if (tokens < 1 || dim < 1)
        throw Error(ErrorKind::ShapeMismatch, "soft prompt shape must be at least 1x1");
    if (seeds.size() > std::size_t(cfg.population_size))
        throw Error(ErrorKind::ConfigError, "more seeds (" + std::to_string(seeds.size())
                                                + ") than population_size (" + std::to_string(cfg.population_size)
                                                + ")");
    Population<Scalar> pop;
    for (const auto& s : seeds) {
        if (s.rows() != tokens || s.cols() != dim)
            throw Error(ErrorKind::ShapeMismatch, "seed prompt is " + std::to_string(s.rows()) + "x"
                                                      + std::to_string(s.cols()) + ", expected "
                                                      + std::to_string(tokens) + "x" + std::to_string(dim));
        pop.members.push_back(s);
    }

    // generation index "max" is reserved for initialization
    auto rng = member_stream(cfg.rng_seed, std::numeric_limits<std::uint64_t>::max(), 0);
    std::uniform_real_distribution<double> uniform(cfg.lower_bound, cfg.upper_bound);
    while (pop.members.size() < std::size_t(cfg.population_size)) {
        SoftPrompt<Scalar> m(tokens, dim);
        for (Eigen::Index i = 0; i < m.size(); ++i)
            m.data()[i] = static_cast<Scalar>(uniform(rng));
        pop.members.push_back(std::move(m));
    }
    pop.fitnesses.assign(pop.members.size(), kUnevaluated);
    return pop;
}

template <typename Scalar>
using FitnessFn = std::function<double(const SoftPrompt<Scalar>&)>;

template <typename Scalar>
using GenerationObserver = std::function<void(const GenerationRecord&, const Population<Scalar>&)>;

namespace detail {

template <typename Scalar>
double evaluate_member(const FitnessFn<Scalar>& fitness, const SoftPrompt<Scalar>& candidate, int generation,
                       std::size_t member)
{
    double f;
    try {
        f = fitness(candidate);
    } catch (const std::exception& e) {
        throw Error(ErrorKind::FitnessEvaluationFailed,
                    "generation " + std::to_string(generation) + " member " + std::to_string(member) + ": " + e.what());
    }
    if (!std::isfinite(f)) {
        std::clog << "warning: non-finite fitness at generation " << generation << " member " << member
                  << " treated as +inf\n";
        return std::numeric_limits<double>::infinity();
    }
    return f;
}

template <typename Scalar>
GenerationRecord make_record(const Population<Scalar>& pop)
{
    double sum = 0.0;
    for (double f : pop.fitnesses)
        sum += f;
    return {pop.generation, pop.best_fitness(), sum / double(pop.fitnesses.size()), digest(pop.best())};
}

} // namespace detail

/// Runs up to cfg.max_generations synchronous generations. The best member is
/// fixed at the start of each generation; trials are built and evaluated from
/// the previous population and replacements happen together at the end.
/// Stops early once max - min fitness <= cfg.abs_tolerance.
template <typename Scalar>
EvolveResult<Scalar> evolve(Population<Scalar> pop, const std::type_identity_t<FitnessFn<Scalar>>& fitness,
                            const DEConfig& cfg,
                            const std::type_identity_t<GenerationObserver<Scalar>>& on_generation = {})
{
    cfg.validate();
    const std::size_t n = pop.size();
    if (n != std::size_t(cfg.population_size) || pop.fitnesses.size() != n)
        throw Error(ErrorKind::ConfigError, "population does not match population_size");
    for (const auto& m : pop.members)
        detail::require_same_shape(m, pop.members.front(), "population member");

    const auto workers = std::size_t(cfg.workers);
    EvolveResult<Scalar> result;

    result.evaluations = std::size_t(std::count_if(pop.fitnesses.begin(), pop.fitnesses.end(),
                                                   [](double f) { return std::isnan(f); }));
    parallel_for(n, workers, [&](std::size_t i) {
        if (std::isnan(pop.fitnesses[i]))
            pop.fitnesses[i] = detail::evaluate_member(fitness, pop.members[i], pop.generation, i);
    });
    pop.update_best();
    result.initial_best_fitness = pop.best_fitness();

    std::vector<SoftPrompt<Scalar>> trials(n);
    std::vector<double> trial_fitness(n);
    const int first_generation = pop.generation + 1;
    for (int g = first_generation; g < first_generation + cfg.max_generations; ++g) {
        const SoftPrompt<Scalar> best = pop.best();
        parallel_for(n, workers, [&](std::size_t i) {
            auto rng = member_stream(cfg.rng_seed, std::uint64_t(g), i);
            const auto [b, c] = pick_donors(rng, int(n), int(i));
            const auto& target = pop.members[i];
            const auto mutant = mutate(target, best, pop.members[std::size_t(b)], pop.members[std::size_t(c)], cfg);
            trials[i] = crossover(target, mutant, cfg, rng);
            trial_fitness[i] = detail::evaluate_member(fitness, trials[i], g, i);
        });
        result.evaluations += n;

        for (std::size_t i = 0; i < n; ++i) {
            if (select(pop.fitnesses[i], trial_fitness[i]) == Choice::Trial) {
                pop.members[i] = std::move(trials[i]);
                pop.fitnesses[i] = trial_fitness[i];
            }
        }
        pop.generation = g;
        pop.update_best();

        const auto record = detail::make_record(pop);
        result.history.push_back(record);
        if (on_generation)
            on_generation(record, pop);

        const auto [lo, hi] = std::minmax_element(pop.fitnesses.begin(), pop.fitnesses.end());
        if (*hi - *lo <= cfg.abs_tolerance) {
            result.converged = true;
            break;
        }
    }

    result.best = pop.best();
    result.best_fitness = pop.best_fitness();
    result.population = std::move(pop);
    return result;
}

} // namespace cultalign::de
