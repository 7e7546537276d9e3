#pragma once

// Episodic grip-selection task.
//
// The arm travels between the grip changing station (p = 0) and the object (p = D).
// Actions are indexed grip_0 .. grip_{n-1}, forward (toward the object), backward
// (toward the station). Grips can only be changed at the station. An explicit push
// costs the configured negative reward and forces the arm back to the station.

#include "siv/rl_core.hpp"
#include "siv/siv_feedback.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace siv
{
    enum class Variant
    {
        baseline,
        siv,
        no_siv,
    };

    std::string to_string(Variant v);
    Variant variant_from_string(const std::string &name);

    struct EnvConfig
    {
        std::vector<double> grip_sizes{0.25, 0.5, 0.75, 1.0};
        std::vector<double> object_sizes{0.2, 0.9};
        int travel_steps = 5;
        double push_reward = -1.0;
        int tick_ms = 100;
        // Safety valve; an episode reaching it is recorded as truncated.
        int episode_cap = 1000;

        std::size_t num_grips() const noexcept { return grip_sizes.size(); }
        std::size_t num_actions() const noexcept { return grip_sizes.size() + 2; }
        std::size_t forward_action() const noexcept { return grip_sizes.size(); }
        std::size_t backward_action() const noexcept { return grip_sizes.size() + 1; }
        bool is_grip_action(std::size_t action) const noexcept { return action < grip_sizes.size(); }

        std::vector<std::string> violations() const;
        void validate() const;
    };

    // Evenly spaced apertures (k + 1) / n.
    std::vector<double> default_grip_sizes(std::size_t n);

    struct EnvState
    {
        int position = 0;
        std::size_t grip = 0;
        std::size_t object = 0;
        double object_size = 0.0;
        bool retreat = false;
        std::int64_t step = 0;
        bool terminal = false;

        bool operator==(const EnvState &) const = default;
    };

    struct StepEvents
    {
        bool grip_changed = false;
        bool moved = false;
        bool grasp_success = false;
        bool push_penalized = false;

        bool operator==(const StepEvents &) const = default;
    };

    std::vector<std::string> event_names(const StepEvents &events);

    struct StepOutcome
    {
        EnvState state;
        double reward = 0.0;
        bool terminal = false;
        StepEvents events;
    };

    // Decides whether the given grip successfully grasps an object of the given size.
    using GraspRule = std::function<bool(std::size_t grip, double object_size)>;

    EnvState reset(const EnvConfig &config, Rng &rng);

    ActionMask available_actions(const EnvState &state, const EnvConfig &config);

    StepOutcome step(const EnvState &state, std::size_t action, const std::optional<PushEvent> &pending_push,
                     const EnvConfig &config, const GraspRule &rule);

    FeatureVector observe(const EnvState &state, Variant variant, double hand_state, const EnvConfig &config);

    // Feature layout per variant: grip size and hand state are discrete (one tile per value,
    // no offset), object size is continuous over [0, 1], bias is a single cell.
    TilingConfig tiling_for(Variant variant, const EnvConfig &config, int num_tilings = 8, int tiles_per_dim = 8);

    std::string action_name(std::size_t action, const EnvConfig &config);

    void to_json(nlohmann::json &j, const EnvConfig &c);
    void from_json(const nlohmann::json &j, EnvConfig &c);
} // namespace siv
