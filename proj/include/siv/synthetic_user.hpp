#pragma once

// Stand-in for the human operator: knows the preferred grip per object, signals
// approval through hand roll and presses the push button when the arm heads for the
// object with the wrong grip.

#include "siv/grip_env.hpp"
#include "siv/siv_feedback.hpp"

#include <json.hpp>

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

namespace siv
{
    struct Preference
    {
        double object_size = 0.0;
        std::size_t grip = 0;

        bool operator==(const Preference &) const = default;
    };

    class PreferenceTable
    {
    public:
        PreferenceTable() = default;
        explicit PreferenceTable(std::vector<Preference> entries) : m_entries(std::move(entries)) {}

        // Throws ConfigError when the object size has no entry.
        std::size_t preferred(double object_size) const;
        const std::vector<Preference> &entries() const noexcept { return m_entries; }

        // Total over the env's object sizes, grips in range.
        std::vector<std::string> violations(const EnvConfig &env) const;

    private:
        std::vector<Preference> m_entries;
    };

    // Smallest grip for the smallest object, largest grip for every other object.
    PreferenceTable default_preferences(const EnvConfig &env);

    // Success iff the grip is the preferred one for the object.
    GraspRule preference_rule(PreferenceTable prefs);

    struct UserModelConfig
    {
        double gesture_error = 0.05;
        int reaction_delay = 2;
        int push_threshold = 1;
        double push_probability = 0.8;
        std::uint64_t seed = 0;

        std::vector<std::string> violations() const;
    };

    // Noiseless, instantaneous user that always pushes when eligible.
    UserModelConfig noiseless_user();

    // Gesture for a state the user has already perceived (delay applied by the caller).
    HandSample gesture_for(const EnvState &perceived, const PreferenceTable &prefs, const UserModelConfig &config,
                           Rng &rng, std::int64_t tick);

    std::optional<PushEvent> maybe_push(const EnvState &state, const PreferenceTable &prefs,
                                        const UserModelConfig &config, Rng &rng, std::int64_t tick = 0);

    // Stateful wrapper that applies the reaction delay. Feed it the env state once per
    // tick with observe(); latest() then reports the gesture for the state seen
    // `reaction_delay` ticks earlier (the oldest state of the episode before that).
    class SyntheticUser final : public GestureSource
    {
    public:
        SyntheticUser(PreferenceTable prefs, UserModelConfig config, std::uint64_t seed);

        void begin_episode();
        void observe(std::int64_t tick, const EnvState &state);
        HandSample latest(std::int64_t tick) override;
        std::optional<PushEvent> push_for(std::int64_t tick, const EnvState &state);

        const PreferenceTable &preferences() const noexcept { return m_prefs; }
        const UserModelConfig &config() const noexcept { return m_config; }

    private:
        PreferenceTable m_prefs;
        UserModelConfig m_config;
        Rng m_rng;
        std::deque<EnvState> m_history;
        std::optional<std::int64_t> m_last_tick;
        std::optional<HandSample> m_current;
    };

    void to_json(nlohmann::json &j, const UserModelConfig &c);
    void from_json(const nlohmann::json &j, UserModelConfig &c);
    void to_json(nlohmann::json &j, const PreferenceTable &p);
    void from_json(const nlohmann::json &j, PreferenceTable &p);
} // namespace siv
