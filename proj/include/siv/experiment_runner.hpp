#pragma once

// Headless three-agent comparison (baseline / SIV / no-SIV) against a synthetic user,
// plus the episode driver shared with live sessions and log replay.

#include "siv/grip_env.hpp"
#include "siv/rl_core.hpp"
#include "siv/siv_feedback.hpp"
#include "siv/synthetic_user.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace siv
{
    struct ExperimentSpec
    {
        std::vector<Variant> variants{Variant::baseline, Variant::siv, Variant::no_siv};
        int runs = 3;
        int episodes = 15;
        int grips = 4;
        std::vector<double> object_sizes{0.2, 0.9};
        EnvConfig env;
        AgentConfig agent;
        UserModelConfig user;
        PreferenceTable preferences;
        std::uint64_t master_seed = 1;
        bool blind_shuffle = true;
        int num_tilings = 8;
        int tiles_per_dim = 8;

        std::vector<std::string> violations() const;
        // Throws ConfigError listing every violation.
        void validate() const;
    };

    // Defaults: 4 grips, objects {0.2, 0.9}, 3 runs x 15 episodes, default user.
    ExperimentSpec default_spec();

    void to_json(nlohmann::json &j, const ExperimentSpec &s);
    // Missing fields keep their defaults; grip sizes and preferences are derived from
    // `grips` and `object_sizes` when omitted.
    void from_json(const nlohmann::json &j, ExperimentSpec &s);
    ExperimentSpec load_spec(const std::filesystem::path &path);

    // Seeds depend only on labels, never on execution position.
    std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts);
    std::uint64_t cell_seed(std::uint64_t master, Variant variant, int run);
    std::uint64_t episode_seed(std::uint64_t master, Variant variant, int run, int episode);

    struct TickFeedback
    {
        HandSample sample;
        std::optional<PushEvent> push;
    };

    // Everything the user contributes at one decision tick.
    class FeedbackSource
    {
    public:
        virtual ~FeedbackSource() = default;
        virtual void begin_episode(std::uint64_t /*episode_seed*/) {}
        virtual TickFeedback poll(std::int64_t tick, const EnvState &state) = 0;
    };

    class SyntheticFeedback final : public FeedbackSource
    {
    public:
        SyntheticFeedback(PreferenceTable prefs, UserModelConfig config);

        void begin_episode(std::uint64_t episode_seed) override;
        TickFeedback poll(std::int64_t tick, const EnvState &state) override;

    private:
        SyntheticUser m_user;
    };

    class ReplayFeedback final : public FeedbackSource
    {
    public:
        explicit ReplayFeedback(const GestureLog &log);
        TickFeedback poll(std::int64_t tick, const EnvState &state) override;

    private:
        RecordedGestureSource m_gestures;
        ReplayPushSource m_pushes;
    };

    struct StepRecord
    {
        std::int64_t tick = 0;
        int episode = 0;
        std::int64_t step = 0;
        int position = 0;
        std::size_t grip = 0;
        std::size_t object = 0;
        std::size_t action = 0;
        double reward = 0.0;
        StepEvents events;
        FeatureVector features;
        HandSample sample;
        std::optional<PushEvent> push;
        EnvState next;
    };

    // Step-log line: {step, tick, episode, p, grip, object, action, reward, events, phi}.
    nlohmann::json to_json(const StepRecord &r, const EnvConfig &env);

    struct EpisodeRecord
    {
        Variant variant = Variant::baseline;
        int run = 0;
        int episode = 0;
        std::int64_t steps = 0;
        std::int64_t pushes = 0;
        double total_reward = 0.0;
        bool truncated = false;
        std::uint64_t seed = 0;

        bool operator==(const EpisodeRecord &) const = default;
    };

    // Drives one agent through episodes one decision tick at a time. Each tick observes,
    // selects, completes the previous SARSA transition and steps the environment.
    class EpisodeDriver
    {
    public:
        EpisodeDriver(Variant variant, EnvConfig env, GraspRule rule, SarsaLearner &learner, bool learn = true,
                      bool greedy = false);

        void begin(std::uint64_t episode_seed, FeedbackSource &feedback, int episode_index = 0);
        StepRecord tick(std::int64_t tick, FeedbackSource &feedback);

        bool active() const noexcept { return m_active; }
        bool finished() const noexcept { return !m_active; }
        const EnvState &state() const noexcept { return m_state; }
        EpisodeRecord record() const noexcept { return m_record; }
        int episode_index() const noexcept { return m_episode; }
        Variant variant() const noexcept { return m_variant; }
        const EnvConfig &env() const noexcept { return m_env; }
        double last_reward() const noexcept { return m_last_reward; }

    private:
        struct Pending
        {
            FeatureVector features;
            std::size_t action = 0;
            double reward = 0.0;
        };

        Variant m_variant;
        EnvConfig m_env;
        GraspRule m_rule;
        SarsaLearner *m_learner;
        bool m_learn;
        bool m_greedy;
        bool m_active = false;
        int m_episode = 0;
        EnvState m_state;
        EpisodeRecord m_record;
        std::optional<Pending> m_pending;
        double m_last_reward = 0.0;
    };

    using StepSink = std::function<void(const StepRecord &)>;

    struct EpisodeContext
    {
        Variant variant = Variant::baseline;
        EnvConfig env;
        GraspRule rule;
        std::uint64_t seed = 0;
        int run = 0;
        int episode = 0;
        std::int64_t start_tick = 0;
        bool learn = true;
        bool greedy = false;
    };

    // Runs until grasp success or the episode cap. `next_tick`, when given, receives the
    // first tick after the episode.
    EpisodeRecord run_episode(const EpisodeContext &ctx, SarsaLearner &learner, FeedbackSource &feedback,
                              const StepSink &sink = {}, std::int64_t *next_tick = nullptr);

    struct VariantMetrics
    {
        Variant variant = Variant::baseline;
        std::vector<int> runs;
        std::vector<double> average_steps_per_run;
        std::vector<double> average_pushes_per_run;
        std::int64_t total_steps = 0;
        double total_reward = 0.0;
        std::int64_t total_pushes = 0;

        bool operator==(const VariantMetrics &) const = default;
    };

    struct RunMetrics
    {
        std::vector<VariantMetrics> variants;

        const VariantMetrics *find(Variant v) const;
        bool operator==(const RunMetrics &) const = default;
    };

    // Records are aggregated in (variant, run, episode) order.
    RunMetrics aggregate(std::vector<EpisodeRecord> records);

    struct ExperimentOptions
    {
        int parallel = 1;
        // When set, one replayable log per (variant, run) cell is written here.
        std::optional<std::filesystem::path> log_dir;
    };

    struct ExperimentResult
    {
        std::vector<EpisodeRecord> records; // canonical (variant, run, episode) order
        RunMetrics metrics;
        std::vector<std::pair<Variant, int>> execution_order;
    };

    // Cells execute in blind-shuffled order when the spec asks for it, else variant-major.
    std::vector<std::pair<Variant, int>> execution_order(const ExperimentSpec &spec);

    ExperimentResult run_experiment(const ExperimentSpec &spec, const ExperimentOptions &options = {});

    std::string records_csv(const std::vector<EpisodeRecord> &records);
    std::vector<EpisodeRecord> parse_records_csv(const std::string &text);
    nlohmann::json metrics_json(const RunMetrics &metrics);

    // Writes records.csv, metrics.json and one plot-data CSV per metric panel.
    void export_results(const std::vector<EpisodeRecord> &records, const RunMetrics &metrics,
                        const std::filesystem::path &dir);
    void export_plots(const RunMetrics &metrics, const std::filesystem::path &dir);

    // Session / cell log. Lines are ndjson: one header {"session": {...}}, gesture and push
    // records in replay format, step records, {"episode_end": {...}} and a final
    // {"session_summary": {...}}.
    struct SessionHeader
    {
        std::string session_id;
        Variant variant = Variant::siv;
        std::uint64_t master_seed = 1;
        int run = 0;
        EnvConfig env;
        AgentConfig agent;
        PreferenceTable preferences;
        int num_tilings = 8;
        int tiles_per_dim = 8;
    };

    void to_json(nlohmann::json &j, const SessionHeader &h);
    void from_json(const nlohmann::json &j, SessionHeader &h);

    class SessionLogWriter
    {
    public:
        SessionLogWriter() = default;
        explicit SessionLogWriter(std::ostream &out) : m_out(&out) {}

        void header(const SessionHeader &h);
        void sample(const HandSample &s);
        void push(const PushEvent &p);
        void step(const StepRecord &r, const EnvConfig &env);
        void episode_end(const EpisodeRecord &r);
        void summary(const nlohmann::json &summary);
        void write(const nlohmann::json &line);
        void flush();

    private:
        std::ostream *m_out = nullptr;
    };

    std::string digest_hex(std::uint64_t digest);

    struct ReplayReport
    {
        bool identical = false;
        std::size_t steps_compared = 0;
        std::size_t ticks = 0;
        std::string mismatch;
        std::uint64_t weights_digest = 0;
        std::optional<std::uint64_t> recorded_digest;
        WeightVector weights;
        std::vector<nlohmann::json> steps;
    };

    // Re-runs a recorded session or cell log headlessly and compares every step record
    // and the final weight digest.
    ReplayReport replay_log(const std::vector<nlohmann::json> &records);
} // namespace siv
