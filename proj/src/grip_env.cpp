#include "siv/grip_env.hpp"

#include <algorithm>
#include <cmath>

namespace siv
{
    std::string to_string(Variant v)
    {
        switch (v)
        {
        case Variant::baseline:
            return "baseline";
        case Variant::siv:
            return "siv";
        case Variant::no_siv:
            return "no_siv";
        }
        return "unknown";
    }

    Variant variant_from_string(const std::string &name)
    {
        if (name == "baseline")
        {
            return Variant::baseline;
        }
        if (name == "siv")
        {
            return Variant::siv;
        }
        if (name == "no_siv")
        {
            return Variant::no_siv;
        }
        throw ConfigError("unknown agent variant '" + name + "'");
    }

    std::vector<std::string> EnvConfig::violations() const
    {
        std::vector<std::string> errors;
        if (grip_sizes.size() < 2)
        {
            errors.emplace_back("env: need at least 2 grips");
        }
        for (std::size_t i = 0; i < grip_sizes.size(); ++i)
        {
            if (!(grip_sizes[i] >= 0.0 && grip_sizes[i] <= 1.0))
            {
                errors.emplace_back("env: grip sizes must lie in [0, 1]");
                break;
            }
            if (i > 0 && !(grip_sizes[i] > grip_sizes[i - 1]))
            {
                errors.emplace_back("env: grip sizes must be strictly increasing");
                break;
            }
        }
        if (object_sizes.empty())
        {
            errors.emplace_back("env: need at least one object size");
        }
        for (double s : object_sizes)
        {
            if (!(s >= 0.0 && s <= 1.0))
            {
                errors.emplace_back("env: object sizes must lie in [0, 1]");
                break;
            }
        }
        if (travel_steps < 1)
        {
            errors.emplace_back("env: travel_steps must be >= 1");
        }
        if (!(std::isfinite(push_reward) && push_reward < 0.0))
        {
            errors.emplace_back("env: push_reward must be negative");
        }
        if (tick_ms < 1)
        {
            errors.emplace_back("env: tick_ms must be >= 1");
        }
        if (episode_cap < 1)
        {
            errors.emplace_back("env: episode_cap must be >= 1");
        }
        return errors;
    }

    void EnvConfig::validate() const
    {
        auto errors = violations();
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    std::vector<double> default_grip_sizes(std::size_t n)
    {
        std::vector<double> sizes(n);
        for (std::size_t k = 0; k < n; ++k)
        {
            sizes[k] = static_cast<double>(k + 1) / static_cast<double>(n);
        }
        return sizes;
    }

    std::vector<std::string> event_names(const StepEvents &events)
    {
        std::vector<std::string> names;
        if (events.grip_changed)
        {
            names.emplace_back("grip_changed");
        }
        if (events.moved)
        {
            names.emplace_back("moved");
        }
        if (events.grasp_success)
        {
            names.emplace_back("grasp_success");
        }
        if (events.push_penalized)
        {
            names.emplace_back("push_penalized");
        }
        return names;
    }

    EnvState reset(const EnvConfig &config, Rng &rng)
    {
        std::uniform_int_distribution<std::size_t> grip(0, config.num_grips() - 1);
        std::uniform_int_distribution<std::size_t> object(0, config.object_sizes.size() - 1);
        EnvState state;
        state.grip = grip(rng);
        state.object = object(rng);
        state.object_size = config.object_sizes[state.object];
        return state;
    }

    ActionMask available_actions(const EnvState &state, const EnvConfig &config)
    {
        if (state.terminal)
        {
            throw ContractViolation("available_actions: state is terminal");
        }
        ActionMask mask(config.num_actions());
        if (state.retreat)
        {
            mask.set(config.backward_action());
        }
        else if (state.position == 0)
        {
            for (std::size_t k = 0; k < config.num_grips(); ++k)
            {
                mask.set(k);
            }
            mask.set(config.forward_action());
        }
        else
        {
            mask.set(config.forward_action());
            mask.set(config.backward_action());
        }
        return mask;
    }

    StepOutcome step(const EnvState &state, std::size_t action, const std::optional<PushEvent> &pending_push,
                     const EnvConfig &config, const GraspRule &rule)
    {
        if (state.terminal)
        {
            throw ContractViolation("step: episode already terminated");
        }
        if (!available_actions(state, config).test(action))
        {
            throw ContractViolation("step: action " + action_name(action, config) + " is not available at p=" +
                                    std::to_string(state.position));
        }

        StepOutcome out;
        out.state = state;
        EnvState &next = out.state;

        if (config.is_grip_action(action))
        {
            out.events.grip_changed = next.grip != action;
            next.grip = action;
        }
        else if (action == config.forward_action())
        {
            if (next.position < config.travel_steps)
            {
                ++next.position;
                out.events.moved = true;
            }
            // Arriving at (or pushing against) the object attempts the grasp.
            if (next.position == config.travel_steps && rule(next.grip, next.object_size))
            {
                next.terminal = true;
                out.events.grasp_success = true;
            }
        }
        else
        {
            if (next.position > 0)
            {
                --next.position;
                out.events.moved = true;
            }
            if (next.position == 0)
            {
                next.retreat = false;
            }
        }

        if (pending_push)
        {
            out.reward = config.push_reward;
            out.events.push_penalized = true;
            if (!next.terminal && next.position > 0)
            {
                next.retreat = true;
            }
        }

        ++next.step;
        out.terminal = next.terminal;
        return out;
    }

    FeatureVector observe(const EnvState &state, Variant variant, double hand_state, const EnvConfig &config)
    {
        const double grip_size = config.grip_sizes.at(state.grip);
        switch (variant)
        {
        case Variant::baseline:
            return FeatureVector{{grip_size, state.object_size, 1.0}};
        case Variant::siv:
            if (hand_state != 1.0 && hand_state != -1.0)
            {
                throw ContractViolation("observe: hand state must be +1 or -1");
            }
            return FeatureVector{{grip_size, hand_state, 1.0}};
        case Variant::no_siv:
            return FeatureVector{{grip_size, 1.0}};
        }
        throw ContractViolation("observe: unknown variant");
    }

    TilingConfig tiling_for(Variant variant, const EnvConfig &config, int num_tilings, int tiles_per_dim)
    {
        const std::vector<double> grips = config.grip_sizes;
        const std::vector<double> bias{1.0};
        const int n = static_cast<int>(grips.size());
        switch (variant)
        {
        case Variant::baseline:
            return make_tiling(FeatureBounds{{0.0, 0.0, 0.0}, {1.0, 1.0, 1.0}}, {n, tiles_per_dim, 1}, num_tilings,
                               {grips, {}, bias});
        case Variant::siv:
            return make_tiling(FeatureBounds{{0.0, -1.0, 0.0}, {1.0, 1.0, 1.0}}, {n, 2, 1}, num_tilings,
                               {grips, {-1.0, 1.0}, bias});
        case Variant::no_siv:
            return make_tiling(FeatureBounds{{0.0, 0.0}, {1.0, 1.0}}, {n, 1}, num_tilings, {grips, bias});
        }
        throw ConfigError("tiling_for: unknown variant");
    }

    std::string action_name(std::size_t action, const EnvConfig &config)
    {
        if (config.is_grip_action(action))
        {
            return "grip_" + std::to_string(action);
        }
        if (action == config.forward_action())
        {
            return "forward";
        }
        if (action == config.backward_action())
        {
            return "backward";
        }
        return "invalid_" + std::to_string(action);
    }

    void to_json(nlohmann::json &j, const EnvConfig &c)
    {
        j = nlohmann::json{{"grip_sizes", c.grip_sizes},   {"object_sizes", c.object_sizes},
                           {"travel_steps", c.travel_steps}, {"push_reward", c.push_reward},
                           {"tick_ms", c.tick_ms},           {"episode_cap", c.episode_cap}};
    }

    void from_json(const nlohmann::json &j, EnvConfig &c)
    {
        c.grip_sizes = j.value("grip_sizes", c.grip_sizes);
        c.object_sizes = j.value("object_sizes", c.object_sizes);
        c.travel_steps = j.value("travel_steps", c.travel_steps);
        c.push_reward = j.value("push_reward", c.push_reward);
        c.tick_ms = j.value("tick_ms", c.tick_ms);
        c.episode_cap = j.value("episode_cap", c.episode_cap);
    }
} // namespace siv
