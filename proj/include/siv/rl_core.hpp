#pragma once

// SARSA(lambda) over tile-coded linear action values.
//
// Weights are a dense (tile, action) table. A feature vector activates exactly one
// tile per tiling and Q(s, a) is the sum of the active tiles' weights for action a.

#include "siv/errors.hpp"

#include <json.hpp>

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace siv
{
    using Rng = std::mt19937_64;

    struct FeatureBounds
    {
        std::vector<double> lower;
        std::vector<double> upper;

        std::size_t size() const noexcept { return lower.size(); }
        void validate() const;
    };

    // Per-dimension tiling layout. A dimension with non-empty `levels` is discrete:
    // each level owns one cell and the dimension is never offset.
    struct TilingConfig
    {
        int num_tilings = 8;
        std::vector<int> tiles;                    // per dimension
        std::vector<std::vector<double>> levels;   // per dimension, empty = continuous
        std::vector<std::vector<double>> offsets;  // [tiling][dimension], in tile widths
        std::size_t table_size = 0;
        FeatureBounds bounds;

        std::size_t feature_count() const noexcept { return bounds.size(); }
        bool is_discrete(std::size_t dim) const noexcept { return dim < levels.size() && !levels[dim].empty(); }
        // Cells along one dimension: one per level when discrete; tiles + 1 when continuous,
        // since offsets shift a partial cell past the upper bound.
        std::size_t cells(std::size_t dim) const
        {
            return static_cast<std::size_t>(tiles[dim]) + (is_discrete(dim) ? 0 : 1);
        }
        std::size_t tiles_per_tiling() const;
        void validate() const;
    };

    // Builds a tiling with offsets i / num_tilings tile widths on continuous dimensions
    // and the minimal exact table size. For discrete dimensions `tiles[d]` is ignored
    // and replaced by the level count.
    TilingConfig make_tiling(FeatureBounds bounds, std::vector<int> tiles, int num_tilings,
                             std::vector<std::vector<double>> levels = {});

    struct FeatureVector
    {
        std::vector<double> values;

        std::size_t size() const noexcept { return values.size(); }
        double operator[](std::size_t i) const { return values[i]; }
        bool operator==(const FeatureVector &) const = default;
        // Last entry must be the 1.0 bias and every entry finite.
        void validate() const;
    };

    struct ActiveTileSet
    {
        std::vector<std::size_t> indices;

        bool operator==(const ActiveTileSet &) const = default;
    };

    class ActionMask
    {
    public:
        ActionMask() = default;
        explicit ActionMask(std::size_t num_actions, bool value = false) : m_bits(num_actions, value) {}

        std::size_t size() const noexcept { return m_bits.size(); }
        bool test(std::size_t action) const { return action < m_bits.size() && m_bits[action]; }
        void set(std::size_t action, bool value = true) { m_bits.at(action) = value; }
        std::size_t count() const noexcept;
        bool any() const noexcept { return count() > 0; }
        std::vector<std::size_t> actions() const;

        bool operator==(const ActionMask &) const = default;

    private:
        std::vector<bool> m_bits;
    };

    class WeightVector
    {
    public:
        WeightVector() = default;
        WeightVector(std::size_t table_size, std::size_t num_actions, double init = 0.0)
            : m_tiles(table_size), m_actions(num_actions), m_data(table_size * num_actions, init)
        {
        }

        std::size_t table_size() const noexcept { return m_tiles; }
        std::size_t num_actions() const noexcept { return m_actions; }

        double &at(std::size_t tile, std::size_t action) { return m_data[tile * m_actions + action]; }
        double at(std::size_t tile, std::size_t action) const { return m_data[tile * m_actions + action]; }

        std::span<double> data() noexcept { return m_data; }
        std::span<const double> data() const noexcept { return m_data; }

        bool operator==(const WeightVector &) const = default;

    private:
        std::size_t m_tiles = 0;
        std::size_t m_actions = 0;
        std::vector<double> m_data;
    };

    enum class TraceMode
    {
        replacing,
        accumulating,
    };

    // Traces share the weight index space. The set of nonzero entries is tracked so that
    // decay and the weight update only visit the sparse support.
    class EligibilityTraces
    {
    public:
        EligibilityTraces() = default;
        EligibilityTraces(std::size_t table_size, std::size_t num_actions, TraceMode mode = TraceMode::replacing)
            : m_values(table_size, num_actions), m_mode(mode)
        {
        }

        TraceMode mode() const noexcept { return m_mode; }
        std::size_t table_size() const noexcept { return m_values.table_size(); }
        std::size_t num_actions() const noexcept { return m_values.num_actions(); }
        double at(std::size_t tile, std::size_t action) const { return m_values.at(tile, action); }
        void set(std::size_t tile, std::size_t action, double value);
        // Marks an active (tile, action) pair: 1 under replacing, +1 under accumulating.
        void visit(std::size_t tile, std::size_t action);
        void decay(double factor);
        void clear();

        // Flat indices (tile * num_actions + action) of entries that may be nonzero.
        const std::vector<std::size_t> &support() const noexcept { return m_support; }
        std::span<const double> data() const noexcept { return m_values.data(); }

    private:
        WeightVector m_values;
        std::vector<std::size_t> m_support;
        TraceMode m_mode = TraceMode::replacing;
    };

    enum class SelectionStrategy
    {
        epsilon_greedy,
        epsilon_soft,
        softmax,
    };

    struct AgentConfig
    {
        double step_size = 0.5;
        double discount = 1.0;
        double trace_decay = 0.0;
        double epsilon = 0.1;
        SelectionStrategy strategy = SelectionStrategy::epsilon_greedy;
        double temperature = 1.0;
        TraceMode trace_mode = TraceMode::replacing;
        std::uint64_t seed = 0;

        // Returns every violated range, empty when valid.
        std::vector<std::string> violations() const;
        void validate() const;
    };

    struct Transition
    {
        FeatureVector prior;
        std::size_t action = 0;
        double reward = 0.0;
        FeatureVector next;
        std::size_t next_action = 0;
        bool terminal = false;
    };

    ActiveTileSet tile_code(const FeatureVector &features, const TilingConfig &config);

    double q_value(const WeightVector &weights, const ActiveTileSet &active, std::size_t action);

    std::size_t select_action(std::span<const double> q_values, const ActionMask &available,
                              const AgentConfig &config, Rng &rng);

    double td_error(const Transition &t, const WeightVector &weights, const AgentConfig &config,
                    const TilingConfig &coder);

    // In-place update; returns the TD error that was applied.
    double sarsa_update(WeightVector &weights, EligibilityTraces &traces, const Transition &t,
                        const AgentConfig &config, const TilingConfig &coder);

    void reset_traces(EligibilityTraces &traces);

    // Owns the parameters of one learner. Not thread-safe; move between threads freely.
    class SarsaLearner
    {
    public:
        SarsaLearner(TilingConfig coder, AgentConfig config, std::size_t num_actions);

        std::vector<double> action_values(const FeatureVector &features) const;
        std::size_t select(const FeatureVector &features, const ActionMask &available);
        // Greedy with random tie-breaking; consumes the learner rng.
        std::size_t select_greedy(const FeatureVector &features, const ActionMask &available);
        double update(const Transition &t);
        void begin_episode() { reset_traces(m_traces); }

        const TilingConfig &coder() const noexcept { return m_coder; }
        const AgentConfig &config() const noexcept { return m_config; }
        const WeightVector &weights() const noexcept { return m_weights; }
        WeightVector &weights() noexcept { return m_weights; }
        const EligibilityTraces &traces() const noexcept { return m_traces; }
        std::uint64_t steps() const noexcept { return m_steps; }
        std::size_t num_actions() const noexcept { return m_weights.num_actions(); }
        Rng &rng() noexcept { return m_rng; }

    private:
        TilingConfig m_coder;
        AgentConfig m_config;
        WeightVector m_weights;
        EligibilityTraces m_traces;
        Rng m_rng;
        std::uint64_t m_steps = 0;
    };

    // FNV-1a over the raw bytes of every weight; equal digests mean bit-identical weights.
    std::uint64_t weights_digest(const WeightVector &weights);

    inline constexpr int kSnapshotFormatVersion = 1;

    struct WeightSnapshot
    {
        int format_version = kSnapshotFormatVersion;
        AgentConfig config;
        TilingConfig coder;
        WeightVector weights;
        std::uint64_t steps = 0;
    };

    WeightSnapshot snapshot(const SarsaLearner &learner);

    std::string to_string(SelectionStrategy s);
    SelectionStrategy selection_strategy_from_string(const std::string &name);

    void to_json(nlohmann::json &j, const AgentConfig &c);
    void from_json(const nlohmann::json &j, AgentConfig &c);
    void to_json(nlohmann::json &j, const TilingConfig &c);
    void from_json(const nlohmann::json &j, TilingConfig &c);
    void to_json(nlohmann::json &j, const WeightSnapshot &s);
    void from_json(const nlohmann::json &j, WeightSnapshot &s);
} // namespace siv
