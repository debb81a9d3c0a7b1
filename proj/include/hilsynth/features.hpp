#ifndef HILSYNTH_FEATURES_HPP
#define HILSYNTH_FEATURES_HPP

#include <array>
#include <compare>
#include <cstdlib>
#include <map>
#include <string>
#include <vector>

#include "hilsynth/gridworld.hpp"

namespace hilsynth {

/// (obstacle count, x mismatch, y mismatch) of an observation-action pair.
struct FeatureTuple {
    int f1 = 0;
    int f2 = 0;
    int f3 = 0;

    friend auto operator<=>(const FeatureTuple&, const FeatureTuple&) = default;
};

inline FeatureTuple feature(const ObsVector& z, Action a) {
    auto b = [&z](std::size_t i) { return z.bit(i) ? 1 : 0; };
    const Position d = delta(a);
    FeatureTuple f;
    f.f1 = static_cast<int>(z.count());
    f.f2 = std::abs(d.x - (b(1) + b(2) + b(3)) + (b(5) + b(6) + b(7)));
    f.f3 = std::abs(d.y - (b(1) + b(7) + b(8)) + (b(3) + b(4) + b(5)));
    return f;
}

inline bool equivalent(const ObsVector& z1, Action a1, const ObsVector& z2, Action a2) {
    return feature(z1, a1) == feature(z2, a2);
}

struct ObsAction {
    ObsVector obs;
    Action action = Action::Left;

    friend bool operator==(const ObsAction&, const ObsAction&) = default;
};

struct FeatureClass {
    FeatureTuple key;
    std::vector<ObsAction> members;  // ordered by (observation code, action)
};

/// Partition of all (observation, action) pairs by feature tuple, ordered by tuple.
class FeatureClassTable {
public:
    static constexpr std::size_t kPairs = ObsVector::num_values * kNumActions;

    FeatureClassTable() {
        std::map<FeatureTuple, std::size_t> index;
        for (unsigned long code = 0; code < ObsVector::num_values; ++code)
            for (auto a : kActions) index.emplace(feature(ObsVector::from_code(code), a), 0);
        for (auto& [key, id] : index) {
            id = classes_.size();
            classes_.push_back({key, {}});
        }
        for (unsigned long code = 0; code < ObsVector::num_values; ++code) {
            const auto z = ObsVector::from_code(code);
            for (auto a : kActions) {
                const auto id = index.at(feature(z, a));
                class_of_[pair_index(z, a)] = id;
                classes_[id].members.push_back({z, a});
            }
        }
    }

    static std::size_t pair_index(const ObsVector& z, Action a) { return z.code() * kNumActions + index_of(a); }

    const std::vector<FeatureClass>& classes() const noexcept { return classes_; }
    const FeatureClass& class_of(const ObsVector& z, Action a) const { return classes_[class_of_[pair_index(z, a)]]; }
    std::size_t class_id(const ObsVector& z, Action a) const { return class_of_[pair_index(z, a)]; }

    /// Members of the class that use the given action.
    std::size_t size_for_action(std::size_t class_id, Action a) const {
        std::size_t n = 0;
        for (const auto& m : classes_[class_id].members)
            if (m.action == a) ++n;
        return n;
    }

    /// One row per member: f1,f2,f3,obs_bits,action.
    std::string to_csv() const {
        std::string out = "f1,f2,f3,obs_bits,action\n";
        for (const auto& c : classes_)
            for (const auto& m : c.members)
                out += std::to_string(c.key.f1) + "," + std::to_string(c.key.f2) + "," + std::to_string(c.key.f3) +
                       "," + m.obs.str() + "," + action_name(m.action) + "\n";
        return out;
    }

private:
    std::vector<FeatureClass> classes_;
    std::array<std::size_t, kPairs> class_of_{};
};

inline const FeatureClassTable& standard_feature_classes() {
    static const FeatureClassTable table;
    return table;
}

inline std::vector<FeatureClass> equivalence_classes() { return standard_feature_classes().classes(); }

} // namespace hilsynth

#endif // HILSYNTH_FEATURES_HPP
