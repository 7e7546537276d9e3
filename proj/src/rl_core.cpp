#include "siv/rl_core.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

namespace siv
{
    void FeatureBounds::validate() const
    {
        std::vector<std::string> errors;
        if (lower.empty())
        {
            errors.emplace_back("feature bounds: need at least one feature");
        }
        if (lower.size() != upper.size())
        {
            errors.emplace_back("feature bounds: lower/upper length mismatch");
        }
        for (std::size_t i = 0; i < std::min(lower.size(), upper.size()); ++i)
        {
            if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]))
            {
                errors.push_back("feature bounds: non-finite bound at feature " + std::to_string(i));
            }
            else if (!(lower[i] < upper[i]))
            {
                errors.push_back("feature bounds: lower >= upper at feature " + std::to_string(i));
            }
        }
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    std::size_t TilingConfig::tiles_per_tiling() const
    {
        std::size_t product = 1;
        for (std::size_t d = 0; d < tiles.size(); ++d)
        {
            product *= cells(d);
        }
        return product;
    }

    void TilingConfig::validate() const
    {
        bounds.validate();
        std::vector<std::string> errors;
        const std::size_t dims = bounds.size();
        if (num_tilings < 1)
        {
            errors.emplace_back("tiling: num_tilings must be >= 1");
        }
        if (tiles.size() != dims)
        {
            errors.emplace_back("tiling: tiles-per-dimension length does not match feature count");
        }
        for (int t : tiles)
        {
            if (t < 1)
            {
                errors.emplace_back("tiling: tiles per dimension must be >= 1");
                break;
            }
        }
        if (!levels.empty() && levels.size() != dims)
        {
            errors.emplace_back("tiling: levels length does not match feature count");
        }
        for (std::size_t d = 0; d < levels.size() && d < tiles.size(); ++d)
        {
            if (!levels[d].empty() && static_cast<std::size_t>(tiles[d]) != levels[d].size())
            {
                errors.push_back("tiling: discrete dimension " + std::to_string(d) + " needs one tile per level");
            }
            if (!std::is_sorted(levels[d].begin(), levels[d].end()))
            {
                errors.push_back("tiling: levels of dimension " + std::to_string(d) + " must be sorted");
            }
        }
        if (offsets.size() != static_cast<std::size_t>(std::max(num_tilings, 0)))
        {
            errors.emplace_back("tiling: need one offset vector per tiling");
        }
        for (const auto &row : offsets)
        {
            if (row.size() != dims)
            {
                errors.emplace_back("tiling: offset vector length does not match feature count");
                break;
            }
            for (double o : row)
            {
                if (!(o >= 0.0 && o < 1.0))
                {
                    errors.emplace_back("tiling: offsets must lie in [0, 1) tile widths");
                    break;
                }
            }
        }
        if (errors.empty() && table_size < static_cast<std::size_t>(num_tilings) * tiles_per_tiling())
        {
            errors.emplace_back("tiling: table size smaller than tilings x cells per tiling");
        }
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    TilingConfig make_tiling(FeatureBounds bounds, std::vector<int> tiles, int num_tilings,
                             std::vector<std::vector<double>> levels)
    {
        TilingConfig config;
        config.num_tilings = num_tilings;
        config.bounds = std::move(bounds);
        config.tiles = std::move(tiles);
        config.levels = std::move(levels);
        const std::size_t dims = config.bounds.size();
        if (config.levels.empty())
        {
            config.levels.resize(dims);
        }
        for (std::size_t d = 0; d < std::min(dims, std::min(config.levels.size(), config.tiles.size())); ++d)
        {
            if (!config.levels[d].empty())
            {
                config.tiles[d] = static_cast<int>(config.levels[d].size());
            }
        }
        config.offsets.assign(static_cast<std::size_t>(std::max(num_tilings, 0)), std::vector<double>(dims, 0.0));
        for (int i = 0; i < num_tilings; ++i)
        {
            for (std::size_t d = 0; d < dims; ++d)
            {
                if (!config.is_discrete(d))
                {
                    config.offsets[static_cast<std::size_t>(i)][d] = static_cast<double>(i) / num_tilings;
                }
            }
        }
        if (config.tiles.size() == dims && num_tilings >= 1)
        {
            config.table_size = static_cast<std::size_t>(num_tilings) * config.tiles_per_tiling();
        }
        config.validate();
        return config;
    }

    void FeatureVector::validate() const
    {
        if (values.empty())
        {
            throw ContractViolation("feature vector is empty");
        }
        for (double v : values)
        {
            if (!std::isfinite(v))
            {
                throw ContractViolation("feature vector has a non-finite entry");
            }
        }
        if (values.back() != 1.0)
        {
            throw ContractViolation("feature vector bias entry must be 1.0");
        }
    }

    std::size_t ActionMask::count() const noexcept
    {
        return static_cast<std::size_t>(std::count(m_bits.begin(), m_bits.end(), true));
    }

    std::vector<std::size_t> ActionMask::actions() const
    {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < m_bits.size(); ++i)
        {
            if (m_bits[i])
            {
                out.push_back(i);
            }
        }
        return out;
    }

    void EligibilityTraces::set(std::size_t tile, std::size_t action, double value)
    {
        const std::size_t flat = tile * num_actions() + action;
        if (value != 0.0 && m_values.data()[flat] == 0.0)
        {
            m_support.push_back(flat);
        }
        m_values.data()[flat] = value;
    }

    void EligibilityTraces::visit(std::size_t tile, std::size_t action)
    {
        const double current = at(tile, action);
        set(tile, action, m_mode == TraceMode::replacing ? 1.0 : current + 1.0);
    }

    void EligibilityTraces::decay(double factor)
    {
        auto values = m_values.data();
        std::size_t kept = 0;
        for (std::size_t flat : m_support)
        {
            values[flat] *= factor;
            if (values[flat] != 0.0)
            {
                m_support[kept++] = flat;
            }
        }
        m_support.resize(kept);
    }

    void EligibilityTraces::clear()
    {
        auto values = m_values.data();
        for (std::size_t flat : m_support)
        {
            values[flat] = 0.0;
        }
        m_support.clear();
    }

    std::vector<std::string> AgentConfig::violations() const
    {
        std::vector<std::string> errors;
        if (!(std::isfinite(step_size) && step_size > 0.0))
        {
            errors.emplace_back("agent: step_size must be > 0");
        }
        if (!(discount >= 0.0 && discount <= 1.0))
        {
            errors.emplace_back("agent: discount must lie in [0, 1]");
        }
        if (!(trace_decay >= 0.0 && trace_decay <= 1.0))
        {
            errors.emplace_back("agent: trace_decay must lie in [0, 1]");
        }
        if (!(epsilon >= 0.0 && epsilon <= 1.0))
        {
            errors.emplace_back("agent: epsilon must lie in [0, 1]");
        }
        if (!(std::isfinite(temperature) && temperature > 0.0))
        {
            errors.emplace_back("agent: temperature must be > 0");
        }
        return errors;
    }

    void AgentConfig::validate() const
    {
        auto errors = violations();
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    namespace
    {
        std::size_t continuous_cell(double x, double lower, double upper, int tiles, double offset)
        {
            const double width = (upper - lower) / tiles;
            const double scaled = std::floor((x - lower) / width + offset);
            return static_cast<std::size_t>(std::clamp(scaled, 0.0, static_cast<double>(tiles)));
        }

        std::size_t discrete_cell(double x, const std::vector<double> &levels)
        {
            std::size_t best = 0;
            double best_distance = std::abs(x - levels[0]);
            for (std::size_t i = 1; i < levels.size(); ++i)
            {
                const double distance = std::abs(x - levels[i]);
                if (distance < best_distance)
                {
                    best = i;
                    best_distance = distance;
                }
            }
            return best;
        }

        std::size_t argmax_available(std::span<const double> q, const std::vector<std::size_t> &available, Rng &rng)
        {
            double best = -std::numeric_limits<double>::infinity();
            std::vector<std::size_t> ties;
            for (std::size_t a : available)
            {
                if (q[a] > best)
                {
                    best = q[a];
                    ties.assign(1, a);
                }
                else if (q[a] == best)
                {
                    ties.push_back(a);
                }
            }
            if (ties.size() == 1)
            {
                return ties.front();
            }
            std::uniform_int_distribution<std::size_t> pick(0, ties.size() - 1);
            return ties[pick(rng)];
        }

        std::size_t uniform_from(const std::vector<std::size_t> &choices, Rng &rng)
        {
            std::uniform_int_distribution<std::size_t> pick(0, choices.size() - 1);
            return choices[pick(rng)];
        }
    } // namespace

    ActiveTileSet tile_code(const FeatureVector &features, const TilingConfig &config)
    {
        const std::size_t dims = config.feature_count();
        if (features.size() != dims)
        {
            throw ConfigError("tile_code: feature vector has " + std::to_string(features.size()) +
                              " entries, tiling expects " + std::to_string(dims));
        }
        const std::size_t per_tiling = config.tiles_per_tiling();
        ActiveTileSet active;
        active.indices.reserve(static_cast<std::size_t>(config.num_tilings));
        for (int t = 0; t < config.num_tilings; ++t)
        {
            const auto &offsets = config.offsets[static_cast<std::size_t>(t)];
            std::size_t index = 0;
            for (std::size_t d = 0; d < dims; ++d)
            {
                const double lower = config.bounds.lower[d];
                const double upper = config.bounds.upper[d];
                const double x = std::clamp(features[d], lower, upper);
                const std::size_t cell = config.is_discrete(d)
                                             ? discrete_cell(x, config.levels[d])
                                             : continuous_cell(x, lower, upper, config.tiles[d], offsets[d]);
                index = index * config.cells(d) + cell;
            }
            active.indices.push_back(static_cast<std::size_t>(t) * per_tiling + index);
        }
        return active;
    }

    double q_value(const WeightVector &weights, const ActiveTileSet &active, std::size_t action)
    {
        double sum = 0.0;
        for (std::size_t tile : active.indices)
        {
            sum += weights.at(tile, action);
        }
        return sum;
    }

    std::size_t select_action(std::span<const double> q_values, const ActionMask &available,
                              const AgentConfig &config, Rng &rng)
    {
        if (available.size() != q_values.size())
        {
            throw ContractViolation("select_action: mask and q-value lengths differ");
        }
        const auto choices = available.actions();
        if (choices.empty())
        {
            throw ContractViolation("select_action: no available action");
        }

        std::uniform_real_distribution<double> unit(0.0, 1.0);
        switch (config.strategy)
        {
        case SelectionStrategy::epsilon_greedy:
        {
            if (unit(rng) < config.epsilon)
            {
                return uniform_from(choices, rng);
            }
            return argmax_available(q_values, choices, rng);
        }
        case SelectionStrategy::epsilon_soft:
        {
            const std::size_t best = argmax_available(q_values, choices, rng);
            if (choices.size() == 1 || !(unit(rng) < config.epsilon))
            {
                return best;
            }
            std::vector<std::size_t> others;
            others.reserve(choices.size() - 1);
            std::copy_if(choices.begin(), choices.end(), std::back_inserter(others),
                         [best](std::size_t a) { return a != best; });
            return uniform_from(others, rng);
        }
        case SelectionStrategy::softmax:
        {
            double top = -std::numeric_limits<double>::infinity();
            for (std::size_t a : choices)
            {
                top = std::max(top, q_values[a]);
            }
            std::vector<double> weights;
            weights.reserve(choices.size());
            for (std::size_t a : choices)
            {
                weights.push_back(std::exp((q_values[a] - top) / config.temperature));
            }
            std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
            return choices[pick(rng)];
        }
        }
        throw ContractViolation("select_action: unknown strategy");
    }

    double td_error(const Transition &t, const WeightVector &weights, const AgentConfig &config,
                    const TilingConfig &coder)
    {
        const double current = q_value(weights, tile_code(t.prior, coder), t.action);
        if (t.terminal)
        {
            return t.reward - current;
        }
        const double next = q_value(weights, tile_code(t.next, coder), t.next_action);
        return t.reward + config.discount * next - current;
    }

    double sarsa_update(WeightVector &weights, EligibilityTraces &traces, const Transition &t,
                        const AgentConfig &config, const TilingConfig &coder)
    {
        const double delta = td_error(t, weights, config, coder);
        if (!std::isfinite(delta))
        {
            throw NumericFault("sarsa_update: non-finite TD error");
        }

        traces.decay(config.discount * config.trace_decay);
        for (std::size_t tile : tile_code(t.prior, coder).indices)
        {
            traces.visit(tile, t.action);
        }

        const double step = config.step_size / coder.num_tilings * delta;
        auto w = weights.data();
        const auto e = traces.data();
        for (std::size_t flat : traces.support())
        {
            w[flat] += step * e[flat];
        }
        return delta;
    }

    void reset_traces(EligibilityTraces &traces) { traces.clear(); }

    SarsaLearner::SarsaLearner(TilingConfig coder, AgentConfig config, std::size_t num_actions)
        : m_coder(std::move(coder)), m_config(config), m_weights(m_coder.table_size, num_actions),
          m_traces(m_coder.table_size, num_actions, config.trace_mode), m_rng(config.seed)
    {
        m_coder.validate();
        m_config.validate();
        if (num_actions == 0)
        {
            throw ConfigError("learner: need at least one action");
        }
    }

    std::vector<double> SarsaLearner::action_values(const FeatureVector &features) const
    {
        const auto active = tile_code(features, m_coder);
        std::vector<double> q(num_actions());
        for (std::size_t a = 0; a < q.size(); ++a)
        {
            q[a] = q_value(m_weights, active, a);
        }
        return q;
    }

    std::size_t SarsaLearner::select(const FeatureVector &features, const ActionMask &available)
    {
        const auto q = action_values(features);
        return select_action(q, available, m_config, m_rng);
    }

    std::size_t SarsaLearner::select_greedy(const FeatureVector &features, const ActionMask &available)
    {
        AgentConfig greedy = m_config;
        greedy.strategy = SelectionStrategy::epsilon_greedy;
        greedy.epsilon = 0.0;
        const auto q = action_values(features);
        return select_action(q, available, greedy, m_rng);
    }

    double SarsaLearner::update(const Transition &t)
    {
        const double delta = sarsa_update(m_weights, m_traces, t, m_config, m_coder);
        ++m_steps;
        return delta;
    }

    std::uint64_t weights_digest(const WeightVector &weights)
    {
        std::uint64_t hash = 1469598103934665603ULL;
        for (double w : weights.data())
        {
            auto bits = std::bit_cast<std::uint64_t>(w);
            for (int i = 0; i < 8; ++i)
            {
                hash ^= (bits >> (8 * i)) & 0xffU;
                hash *= 1099511628211ULL;
            }
        }
        return hash;
    }

    WeightSnapshot snapshot(const SarsaLearner &learner)
    {
        WeightSnapshot s;
        s.config = learner.config();
        s.coder = learner.coder();
        s.weights = learner.weights();
        s.steps = learner.steps();
        return s;
    }

    std::string to_string(SelectionStrategy s)
    {
        switch (s)
        {
        case SelectionStrategy::epsilon_greedy:
            return "epsilon_greedy";
        case SelectionStrategy::epsilon_soft:
            return "epsilon_soft";
        case SelectionStrategy::softmax:
            return "softmax";
        }
        return "unknown";
    }

    SelectionStrategy selection_strategy_from_string(const std::string &name)
    {
        if (name == "epsilon_greedy")
        {
            return SelectionStrategy::epsilon_greedy;
        }
        if (name == "epsilon_soft")
        {
            return SelectionStrategy::epsilon_soft;
        }
        if (name == "softmax")
        {
            return SelectionStrategy::softmax;
        }
        throw ConfigError("agent: unknown selection strategy '" + name + "'");
    }

    void to_json(nlohmann::json &j, const AgentConfig &c)
    {
        j = nlohmann::json{{"step_size", c.step_size},
                           {"discount", c.discount},
                           {"trace_decay", c.trace_decay},
                           {"epsilon", c.epsilon},
                           {"strategy", to_string(c.strategy)},
                           {"temperature", c.temperature},
                           {"trace_mode", c.trace_mode == TraceMode::replacing ? "replacing" : "accumulating"},
                           {"seed", c.seed}};
    }

    void from_json(const nlohmann::json &j, AgentConfig &c)
    {
        c.step_size = j.value("step_size", c.step_size);
        c.discount = j.value("discount", c.discount);
        c.trace_decay = j.value("trace_decay", c.trace_decay);
        c.epsilon = j.value("epsilon", c.epsilon);
        c.temperature = j.value("temperature", c.temperature);
        c.seed = j.value("seed", c.seed);
        if (j.contains("strategy"))
        {
            c.strategy = selection_strategy_from_string(j.at("strategy").get<std::string>());
        }
        if (j.contains("trace_mode"))
        {
            const auto mode = j.at("trace_mode").get<std::string>();
            if (mode == "replacing")
            {
                c.trace_mode = TraceMode::replacing;
            }
            else if (mode == "accumulating")
            {
                c.trace_mode = TraceMode::accumulating;
            }
            else
            {
                throw ConfigError("agent: unknown trace mode '" + mode + "'");
            }
        }
    }

    void to_json(nlohmann::json &j, const TilingConfig &c)
    {
        j = nlohmann::json{{"num_tilings", c.num_tilings},
                           {"tiles", c.tiles},
                           {"levels", c.levels},
                           {"offsets", c.offsets},
                           {"table_size", c.table_size},
                           {"lower", c.bounds.lower},
                           {"upper", c.bounds.upper}};
    }

    void from_json(const nlohmann::json &j, TilingConfig &c)
    {
        j.at("num_tilings").get_to(c.num_tilings);
        j.at("tiles").get_to(c.tiles);
        j.at("levels").get_to(c.levels);
        j.at("offsets").get_to(c.offsets);
        j.at("table_size").get_to(c.table_size);
        j.at("lower").get_to(c.bounds.lower);
        j.at("upper").get_to(c.bounds.upper);
    }

    void to_json(nlohmann::json &j, const WeightSnapshot &s)
    {
        const auto w = s.weights.data();
        j = nlohmann::json{{"format_version", s.format_version},
                           {"config", s.config},
                           {"tiling", s.coder},
                           {"num_actions", s.weights.num_actions()},
                           {"weights", std::vector<double>(w.begin(), w.end())},
                           {"steps", s.steps}};
    }

    void from_json(const nlohmann::json &j, WeightSnapshot &s)
    {
        s.format_version = j.at("format_version").get<int>();
        if (s.format_version != kSnapshotFormatVersion)
        {
            throw ConfigError("snapshot: unsupported format version " + std::to_string(s.format_version));
        }
        j.at("config").get_to(s.config);
        j.at("tiling").get_to(s.coder);
        const auto actions = j.at("num_actions").get<std::size_t>();
        const auto values = j.at("weights").get<std::vector<double>>();
        if (values.size() != s.coder.table_size * actions)
        {
            throw ConfigError("snapshot: weight array length does not match tiling and action count");
        }
        s.weights = WeightVector(s.coder.table_size, actions);
        std::copy(values.begin(), values.end(), s.weights.data().begin());
        s.steps = j.at("steps").get<std::uint64_t>();
    }
} // namespace siv
