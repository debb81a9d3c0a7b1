#ifndef HILSYNTH_DISTRIBUTION_HPP
#define HILSYNTH_DISTRIBUTION_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hilsynth/errors.hpp"

namespace hilsynth {

/// Rows whose mass deviates from one by more than this are rejected.
inline constexpr double kProbabilityTolerance = 1e-9;

/// Deviations at or below this are plain rounding noise and are kept as is,
/// so that a renormalized row reads back bit-identical.
inline constexpr double kRenormalizeSlack = 1e-12;

/**
 * Finite probability distribution over dense integer outcomes.
 *
 * Entries are kept sorted by outcome with zero-mass outcomes dropped, so the
 * stored entries are exactly the support.
 */
class Distribution {
public:
    using Entry = std::pair<std::size_t, double>;

    Distribution() = default;

    static Distribution dirac(std::size_t outcome) {
        Distribution d;
        d.entries_.emplace_back(outcome, 1.0);
        return d;
    }

    static Distribution uniform(std::span<const std::size_t> outcomes) {
        if (outcomes.empty()) throw Error(Errc::InvalidModel, "uniform distribution over empty set");
        std::vector<Entry> entries;
        entries.reserve(outcomes.size());
        const double mass = 1.0 / static_cast<double>(outcomes.size());
        for (auto o : outcomes) entries.emplace_back(o, mass);
        return from_probabilities(std::move(entries));
    }

    /// Normalizes arbitrary non-negative weights. Duplicate outcomes are merged.
    static Distribution from_weights(std::vector<Entry> weights) {
        auto merged = merge(std::move(weights));
        double total = 0.0;
        for (const auto& [o, w] : merged) {
            if (!(w >= 0.0) || !std::isfinite(w))
                throw Error(Errc::InvalidModel, "negative or non-finite weight for outcome " + std::to_string(o));
            total += w;
        }
        if (!(total > 0.0)) throw Error(Errc::InvalidModel, "weights sum to zero");
        Distribution d;
        for (const auto& [o, w] : merged)
            if (w > 0.0) d.entries_.emplace_back(o, w / total);
        return d;
    }

    /**
     * Validating construction from probabilities. Rows off by more than
     * kProbabilityTolerance throw; rows off by more than kRenormalizeSlack are
     * rescaled to sum to one.
     */
    static Distribution from_probabilities(std::vector<Entry> probabilities) {
        auto merged = merge(std::move(probabilities));
        double total = 0.0;
        for (const auto& [o, p] : merged) {
            if (!(p >= 0.0) || !std::isfinite(p))
                throw Error(Errc::InvalidModel, "negative or non-finite probability for outcome " + std::to_string(o));
            total += p;
        }
        const double deviation = std::abs(total - 1.0);
        if (deviation > kProbabilityTolerance)
            throw Error(Errc::InvalidModel, "probabilities sum to " + std::to_string(total));
        Distribution d;
        const bool rescale = deviation > kRenormalizeSlack;
        for (const auto& [o, p] : merged)
            if (p > 0.0) d.entries_.emplace_back(o, rescale ? p / total : p);
        return d;
    }

    /// Sorts and merges but performs no mass checks; used to build deliberately
    /// broken models for validation.
    static Distribution unchecked(std::vector<Entry> entries) {
        Distribution d;
        d.entries_ = merge(std::move(entries));
        return d;
    }

    std::span<const Entry> entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }

    double probability(std::size_t outcome) const noexcept {
        auto it = std::lower_bound(entries_.begin(), entries_.end(), outcome,
                                   [](const Entry& e, std::size_t o) { return e.first < o; });
        return (it != entries_.end() && it->first == outcome) ? it->second : 0.0;
    }

    bool contains(std::size_t outcome) const noexcept { return probability(outcome) > 0.0; }

    double total() const noexcept {
        double s = 0.0;
        for (const auto& e : entries_) s += e.second;
        return s;
    }

    std::vector<std::size_t> support() const {
        std::vector<std::size_t> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_)
            if (e.second > 0.0) out.push_back(e.first);
        return out;
    }

    template <typename Rng>
    std::size_t sample(Rng& rng) const {
        if (entries_.empty()) throw Error(Errc::InvalidModel, "sampling from an empty distribution");
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        double u = unit(rng) * total();
        for (const auto& [o, p] : entries_) {
            if (u < p) return o;
            u -= p;
        }
        return entries_.back().first;
    }

    friend bool operator==(const Distribution&, const Distribution&) = default;

private:
    static std::vector<Entry> merge(std::vector<Entry> entries) {
        std::sort(entries.begin(), entries.end(),
                  [](const Entry& a, const Entry& b) { return a.first < b.first; });
        std::vector<Entry> out;
        out.reserve(entries.size());
        for (const auto& e : entries) {
            if (!out.empty() && out.back().first == e.first)
                out.back().second += e.second;
            else
                out.push_back(e);
        }
        return out;
    }

    std::vector<Entry> entries_;
};

} // namespace hilsynth

#endif // HILSYNTH_DISTRIBUTION_HPP
