#pragma once

// Live human-in-the-loop sessions.
//
// A Session owns the agent and environment and advances one decision per call to
// tick(). Transport threads only hand it raw gestures and pushes through bounded
// channels; tick() stamps them onto the logical timeline (tick k covers
// ((k-1)*100, k*100] ms), logs them in replay format and consumes them.
//
// SessionServer wraps one Session behind a websocket endpoint: JSON text frames,
// one message per frame, a 100 ms tick thread and a 1 s heartbeat.

#include "siv/experiment_runner.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace siv
{
    struct SessionConfig
    {
        std::string session_id = "default";
        Variant variant = Variant::siv;
        // Environment, agent, preferences and master seed; runs/episodes are ignored.
        ExperimentSpec spec = default_spec();
        std::string listen_address = "127.0.0.1";
        unsigned short port = 8765;
        std::filesystem::path log_dir = ".";
        // Hides the variant label from the client.
        bool blind = true;
        bool object_size_visible = false;
        // Debug: include action values in state frames.
        bool show_q = false;
        std::chrono::milliseconds tick_period{100};
        std::chrono::milliseconds heartbeat_period{1000};
        std::chrono::milliseconds reconnect_grace{60000};
        // Stop after this many completed episodes; 0 runs until told to stop.
        int max_episodes = 0;

        std::vector<std::string> violations() const;
        void validate() const;
    };

    void to_json(nlohmann::json &j, const SessionConfig &c);
    void from_json(const nlohmann::json &j, SessionConfig &c);

    // Protocol tags.
    namespace msg
    {
        inline constexpr const char *start = "start";
        inline constexpr const char *gesture = "gesture";
        inline constexpr const char *push = "push";
        inline constexpr const char *stop = "stop";
        inline constexpr const char *state = "state";
        inline constexpr const char *episode_end = "episode_end";
        inline constexpr const char *session_summary = "session_summary";
        inline constexpr const char *heartbeat = "heartbeat";
        inline constexpr const char *error = "error";
        inline constexpr const char *ack = "ack";
    } // namespace msg

    enum class ClientMessageType
    {
        start,
        gesture,
        push,
        stop,
    };

    struct ClientMessage
    {
        ClientMessageType type = ClientMessageType::start;
        std::string session;
        std::int64_t seq = 0;
        double roll_deg = 0.0;
        bool present = false;
        nlohmann::json config;
    };

    // Validates and decodes one client frame. Throws ConfigError on malformed JSON,
    // missing envelope fields, unknown tags or out-of-range payloads.
    ClientMessage parse_client_message(const std::string &text);

    class Session
    {
    public:
        Session(SessionConfig config, std::ostream &log);

        // Thread-safe: called by the transport with wall-clock ms since session start.
        void deliver_sample(double roll_deg, bool present, std::int64_t wall_ms);
        void deliver_push(std::int64_t wall_ms);

        // Tick-loop only. One agent decision + env step; returns the frames to broadcast
        // (a state frame, then an episode_end frame when the episode finished).
        std::vector<nlohmann::json> tick();

        // Writes the summary record and flushes the log. Idempotent.
        nlohmann::json finish(const std::string &reason);

        bool finished() const noexcept { return m_finished; }
        std::int64_t ticks() const noexcept { return m_tick; }
        int completed_episodes() const noexcept { return m_completed; }
        const SessionConfig &config() const noexcept { return m_config; }
        const SessionHeader &header() const noexcept { return m_header; }
        const SarsaLearner &learner() const noexcept { return m_learner; }
        const std::vector<StepRecord> &steps() const noexcept { return m_steps; }
        const std::vector<EpisodeRecord> &episodes() const noexcept { return m_episodes; }
        std::size_t dropped_samples() const { return m_samples.dropped(); }

    private:
        class LiveFeedback final : public FeedbackSource
        {
        public:
            TickFeedback poll(std::int64_t tick, const EnvState &state) override;
            HeldGestureSource held;
            PushChannel pending;
        };

        nlohmann::json state_frame(const StepRecord &rec) const;

        SessionConfig m_config;
        SessionHeader m_header;
        SessionLogWriter m_log;
        SarsaLearner m_learner;
        LiveFeedback m_feedback;
        EpisodeDriver m_driver;
        SampleChannel m_samples{64};
        PushChannel m_push_inbox;
        std::int64_t m_tick = 0;
        int m_episode = 0;
        int m_completed = 0;
        bool m_finished = false;
        nlohmann::json m_summary;
        std::int64_t m_total_pushes = 0;
        std::vector<StepRecord> m_steps;
        std::vector<EpisodeRecord> m_episodes;
    };

    struct ServerStats
    {
        std::int64_t ticks = 0;
        std::int64_t late_ticks = 0;
        std::int64_t heartbeats = 0;
        bool finished = false;
        std::string finish_reason;
    };

    class SessionServer
    {
    public:
        explicit SessionServer(SessionConfig config);
        ~SessionServer();

        SessionServer(const SessionServer &) = delete;
        SessionServer &operator=(const SessionServer &) = delete;

        // Binds and starts the I/O and tick threads. Throws std::runtime_error when the
        // address cannot be bound.
        void start();
        // Ends the session (if still running), flushes the log, closes the client.
        void stop();

        unsigned short port() const noexcept;
        std::filesystem::path log_path() const;
        ServerStats stats() const;
        bool wait_finished(std::chrono::milliseconds timeout) const;

        struct Impl;

    private:
        std::unique_ptr<Impl> m_impl;
    };
} // namespace siv
