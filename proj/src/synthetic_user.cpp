#include "siv/synthetic_user.hpp"

#include <algorithm>

namespace siv
{
    std::size_t PreferenceTable::preferred(double object_size) const
    {
        for (const auto &entry : m_entries)
        {
            if (entry.object_size == object_size)
            {
                return entry.grip;
            }
        }
        throw ConfigError("preferences: no entry for object size " + std::to_string(object_size));
    }

    std::vector<std::string> PreferenceTable::violations(const EnvConfig &env) const
    {
        std::vector<std::string> errors;
        for (double size : env.object_sizes)
        {
            const auto hits = std::count_if(m_entries.begin(), m_entries.end(),
                                            [size](const Preference &p) { return p.object_size == size; });
            if (hits == 0)
            {
                errors.push_back("preferences: no preferred grip for object size " + std::to_string(size));
            }
            else if (hits > 1)
            {
                errors.push_back("preferences: duplicate entries for object size " + std::to_string(size));
            }
        }
        for (const auto &entry : m_entries)
        {
            if (entry.grip >= env.num_grips())
            {
                errors.push_back("preferences: grip index " + std::to_string(entry.grip) + " out of range");
            }
        }
        return errors;
    }

    PreferenceTable default_preferences(const EnvConfig &env)
    {
        std::vector<Preference> entries;
        const double smallest = *std::min_element(env.object_sizes.begin(), env.object_sizes.end());
        for (double size : env.object_sizes)
        {
            entries.push_back(Preference{size, size == smallest ? std::size_t{0} : env.num_grips() - 1});
        }
        return PreferenceTable(std::move(entries));
    }

    GraspRule preference_rule(PreferenceTable prefs)
    {
        return [prefs = std::move(prefs)](std::size_t grip, double object_size) {
            return prefs.preferred(object_size) == grip;
        };
    }

    std::vector<std::string> UserModelConfig::violations() const
    {
        std::vector<std::string> errors;
        if (!(gesture_error >= 0.0 && gesture_error < 1.0))
        {
            errors.emplace_back("user: gesture_error must lie in [0, 1)");
        }
        if (reaction_delay < 0)
        {
            errors.emplace_back("user: reaction_delay must be >= 0");
        }
        if (push_threshold < 0)
        {
            errors.emplace_back("user: push_threshold must be >= 0");
        }
        if (!(push_probability > 0.0 && push_probability <= 1.0))
        {
            errors.emplace_back("user: push_probability must lie in (0, 1]");
        }
        return errors;
    }

    UserModelConfig noiseless_user()
    {
        UserModelConfig c;
        c.gesture_error = 0.0;
        c.reaction_delay = 0;
        c.push_probability = 1.0;
        return c;
    }

    HandSample gesture_for(const EnvState &perceived, const PreferenceTable &prefs, const UserModelConfig &config,
                           Rng &rng, std::int64_t tick)
    {
        bool approve = prefs.preferred(perceived.object_size) == perceived.grip;
        std::bernoulli_distribution flip(config.gesture_error);
        if (flip(rng))
        {
            approve = !approve;
        }
        return HandSample{approve ? kThumbsUpRoll : kThumbsDownRoll, true, tick_time_ms(tick)};
    }

    std::optional<PushEvent> maybe_push(const EnvState &state, const PreferenceTable &prefs,
                                        const UserModelConfig &config, Rng &rng, std::int64_t tick)
    {
        const bool eligible = prefs.preferred(state.object_size) != state.grip &&
                              state.position > config.push_threshold && !state.retreat;
        if (!eligible)
        {
            return std::nullopt;
        }
        std::bernoulli_distribution fire(config.push_probability);
        if (!fire(rng))
        {
            return std::nullopt;
        }
        return PushEvent{tick_time_ms(tick)};
    }

    SyntheticUser::SyntheticUser(PreferenceTable prefs, UserModelConfig config, std::uint64_t seed)
        : m_prefs(std::move(prefs)), m_config(config), m_rng(seed)
    {
    }

    void SyntheticUser::begin_episode()
    {
        m_history.clear();
        m_last_tick.reset();
        m_current.reset();
    }

    void SyntheticUser::observe(std::int64_t tick, const EnvState &state)
    {
        m_history.push_back(state);
        while (m_history.size() > static_cast<std::size_t>(m_config.reaction_delay) + 1)
        {
            m_history.pop_front();
        }
        m_current = gesture_for(m_history.front(), m_prefs, m_config, m_rng, tick);
        m_last_tick = tick;
    }

    HandSample SyntheticUser::latest(std::int64_t tick)
    {
        if (!m_current || !m_last_tick || *m_last_tick > tick)
        {
            return HandSample{0.0, false, tick_time_ms(tick)};
        }
        return *m_current;
    }

    std::optional<PushEvent> SyntheticUser::push_for(std::int64_t tick, const EnvState &state)
    {
        return maybe_push(state, m_prefs, m_config, m_rng, tick);
    }

    void to_json(nlohmann::json &j, const UserModelConfig &c)
    {
        j = nlohmann::json{{"gesture_error", c.gesture_error},
                           {"reaction_delay", c.reaction_delay},
                           {"push_threshold", c.push_threshold},
                           {"push_probability", c.push_probability},
                           {"seed", c.seed}};
    }

    void from_json(const nlohmann::json &j, UserModelConfig &c)
    {
        c.gesture_error = j.value("gesture_error", c.gesture_error);
        c.reaction_delay = j.value("reaction_delay", c.reaction_delay);
        c.push_threshold = j.value("push_threshold", c.push_threshold);
        c.push_probability = j.value("push_probability", c.push_probability);
        c.seed = j.value("seed", c.seed);
    }

    void to_json(nlohmann::json &j, const PreferenceTable &p)
    {
        j = nlohmann::json::array();
        for (const auto &entry : p.entries())
        {
            j.push_back({{"object_size", entry.object_size}, {"grip", entry.grip}});
        }
    }

    void from_json(const nlohmann::json &j, PreferenceTable &p)
    {
        std::vector<Preference> entries;
        for (const auto &item : j)
        {
            entries.push_back(Preference{item.at("object_size").get<double>(), item.at("grip").get<std::size_t>()});
        }
        p = PreferenceTable(std::move(entries));
    }
} // namespace siv
