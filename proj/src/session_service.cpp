#include "siv/session_service.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include <algorithm>
#include <deque>
#include <iostream>

namespace siv
{
    namespace beast = boost::beast;
    namespace websocket = beast::websocket;
    namespace net = boost::asio;
    using tcp = net::ip::tcp;

    std::vector<std::string> SessionConfig::violations() const
    {
        std::vector<std::string> errors;
        if (session_id.empty())
        {
            errors.emplace_back("session: session_id must not be empty");
        }
        if (tick_period != std::chrono::milliseconds(kTickMs))
        {
            errors.emplace_back("session: tick period is fixed at 100 ms");
        }
        if (heartbeat_period <= std::chrono::milliseconds::zero())
        {
            errors.emplace_back("session: heartbeat period must be positive");
        }
        if (reconnect_grace < std::chrono::milliseconds::zero())
        {
            errors.emplace_back("session: reconnect grace must be >= 0");
        }
        if (max_episodes < 0)
        {
            errors.emplace_back("session: max_episodes must be >= 0");
        }
        auto spec_errors = spec.violations();
        errors.insert(errors.end(), spec_errors.begin(), spec_errors.end());
        return errors;
    }

    void SessionConfig::validate() const
    {
        auto errors = violations();
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    void to_json(nlohmann::json &j, const SessionConfig &c)
    {
        j = nlohmann::json{{"session_id", c.session_id},
                           {"variant", to_string(c.variant)},
                           {"spec", c.spec},
                           {"listen_address", c.listen_address},
                           {"port", c.port},
                           {"log_dir", c.log_dir.string()},
                           {"blind", c.blind},
                           {"object_size_visible", c.object_size_visible},
                           {"show_q", c.show_q},
                           {"reconnect_grace_ms", c.reconnect_grace.count()},
                           {"max_episodes", c.max_episodes}};
    }

    void from_json(const nlohmann::json &j, SessionConfig &c)
    {
        c.session_id = j.value("session_id", c.session_id);
        if (j.contains("variant"))
        {
            c.variant = variant_from_string(j.at("variant").get<std::string>());
        }
        if (j.contains("spec"))
        {
            j.at("spec").get_to(c.spec);
        }
        c.listen_address = j.value("listen_address", c.listen_address);
        c.port = j.value("port", c.port);
        c.log_dir = j.value("log_dir", c.log_dir.string());
        c.blind = j.value("blind", c.blind);
        c.object_size_visible = j.value("object_size_visible", c.object_size_visible);
        c.show_q = j.value("show_q", c.show_q);
        c.reconnect_grace = std::chrono::milliseconds(j.value("reconnect_grace_ms", c.reconnect_grace.count()));
        c.max_episodes = j.value("max_episodes", c.max_episodes);
    }

    ClientMessage parse_client_message(const std::string &text)
    {
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(text);
        }
        catch (const nlohmann::json::parse_error &e)
        {
            throw ConfigError(std::string("malformed JSON: ") + e.what());
        }
        if (!j.is_object())
        {
            throw ConfigError("message must be a JSON object");
        }
        if (!j.contains("type") || !j["type"].is_string())
        {
            throw ConfigError("message needs a string 'type'");
        }
        if (!j.contains("session") || !j["session"].is_string())
        {
            throw ConfigError("message needs a string 'session'");
        }
        if (!j.contains("seq") || !j["seq"].is_number_integer())
        {
            throw ConfigError("message needs an integer 'seq'");
        }

        ClientMessage m;
        m.session = j["session"].get<std::string>();
        m.seq = j["seq"].get<std::int64_t>();
        const auto type = j["type"].get<std::string>();
        if (type == msg::start)
        {
            m.type = ClientMessageType::start;
            m.config = j.value("config", nlohmann::json::object());
            if (!m.config.is_object())
            {
                throw ConfigError("start: 'config' must be an object");
            }
        }
        else if (type == msg::gesture)
        {
            m.type = ClientMessageType::gesture;
            if (!j.contains("roll_deg") || !j["roll_deg"].is_number())
            {
                throw ConfigError("gesture: needs numeric 'roll_deg'");
            }
            m.roll_deg = j["roll_deg"].get<double>();
            if (!(m.roll_deg >= -180.0 && m.roll_deg <= 180.0))
            {
                throw ConfigError("gesture: roll_deg outside [-180, 180]");
            }
            if (!j.contains("present") || !j["present"].is_boolean())
            {
                throw ConfigError("gesture: needs boolean 'present'");
            }
            m.present = j["present"].get<bool>();
        }
        else if (type == msg::push)
        {
            m.type = ClientMessageType::push;
        }
        else if (type == msg::stop)
        {
            m.type = ClientMessageType::stop;
        }
        else
        {
            throw ConfigError("unknown message type '" + type + "'");
        }
        return m;
    }

    // ---------------------------------------------------------------------------------
    // Session

    namespace
    {
        SessionHeader session_header(const SessionConfig &config)
        {
            config.validate();
            SessionHeader h;
            h.session_id = config.session_id;
            h.variant = config.variant;
            h.master_seed = config.spec.master_seed;
            h.run = 0;
            h.env = config.spec.env;
            h.agent = config.spec.agent;
            h.agent.seed = cell_seed(h.master_seed, h.variant, h.run);
            h.preferences = config.spec.preferences;
            h.num_tilings = config.spec.num_tilings;
            h.tiles_per_dim = config.spec.tiles_per_dim;
            return h;
        }
    } // namespace

    TickFeedback Session::LiveFeedback::poll(std::int64_t tick, const EnvState & /*state*/)
    {
        return TickFeedback{held.latest(tick), pending.drain(tick)};
    }

    Session::Session(SessionConfig config, std::ostream &log)
        : m_config(std::move(config)), m_header(session_header(m_config)), m_log(log),
          m_learner(tiling_for(m_header.variant, m_header.env, m_header.num_tilings, m_header.tiles_per_dim),
                    m_header.agent, m_header.env.num_actions()),
          m_driver(m_header.variant, m_header.env, preference_rule(m_header.preferences), m_learner)
    {
        m_log.header(m_header);
        m_log.flush();
    }

    void Session::deliver_sample(double roll_deg, bool present, std::int64_t wall_ms)
    {
        m_samples.push(HandSample{roll_deg, present, wall_ms});
    }

    void Session::deliver_push(std::int64_t wall_ms) { m_push_inbox.push(PushEvent{wall_ms}); }

    std::vector<nlohmann::json> Session::tick()
    {
        if (m_finished)
        {
            throw ContractViolation("session: tick after finish");
        }
        const std::int64_t k = m_tick;
        const std::int64_t hi = tick_time_ms(k);
        const std::int64_t lo = k == 0 ? 0 : tick_time_ms(k - 1) + 1;
        for (HandSample s : m_samples.drain())
        {
            s.t_ms = std::clamp(s.t_ms, lo, hi);
            m_log.sample(s);
            m_feedback.held.hold(s);
        }
        for (PushEvent p : m_push_inbox.take_all())
        {
            p.t_ms = std::clamp(p.t_ms, lo, hi);
            m_log.push(p);
            m_feedback.pending.push(p);
        }

        if (!m_driver.active())
        {
            m_driver.begin(episode_seed(m_header.master_seed, m_header.variant, m_header.run, m_episode), m_feedback,
                           m_episode);
        }
        const StepRecord rec = m_driver.tick(k, m_feedback);
        m_log.step(rec, m_header.env);
        m_steps.push_back(rec);
        if (rec.events.push_penalized)
        {
            ++m_total_pushes;
        }
        ++m_tick;

        std::vector<nlohmann::json> frames;
        frames.push_back(state_frame(rec));
        if (m_driver.finished())
        {
            EpisodeRecord record = m_driver.record();
            m_log.episode_end(record);
            m_episodes.push_back(record);
            frames.push_back({{"type", msg::episode_end},
                              {"episode", record.episode},
                              {"steps", record.steps},
                              {"pushes", record.pushes},
                              {"reward", record.total_reward},
                              {"truncated", record.truncated}});
            ++m_episode;
            ++m_completed;
        }
        m_log.flush();
        return frames;
    }

    nlohmann::json Session::state_frame(const StepRecord &rec) const
    {
        const EnvState &s = rec.next;
        const EnvConfig &env = m_header.env;
        nlohmann::json mask = nlohmann::json::array();
        if (!s.terminal)
        {
            for (std::size_t a : available_actions(s, env).actions())
            {
                mask.push_back(action_name(a, env));
            }
        }
        nlohmann::json frame{{"type", msg::state},
                             {"p", s.position},
                             {"travel_steps", env.travel_steps},
                             {"grip", s.grip},
                             {"grip_size", env.grip_sizes.at(s.grip)},
                             {"object_size_visible", m_config.object_size_visible},
                             {"episode", rec.episode},
                             {"step", s.step},
                             {"tick", rec.tick},
                             {"action", action_name(rec.action, env)},
                             {"last_reward", rec.reward},
                             {"terminal", s.terminal},
                             {"retreat", s.retreat},
                             {"mask", mask}};
        if (m_config.object_size_visible)
        {
            frame["object_size"] = s.object_size;
        }
        if (!m_config.blind)
        {
            frame["variant"] = to_string(m_header.variant);
        }
        if (m_config.show_q)
        {
            frame["q"] = m_learner.action_values(rec.features);
        }
        return frame;
    }

    nlohmann::json Session::finish(const std::string &reason)
    {
        if (m_finished)
        {
            return m_summary;
        }
        m_summary = nlohmann::json{{"ticks", m_tick},
                                  {"end_ms", tick_time_ms(std::max<std::int64_t>(m_tick - 1, 0))},
                                  {"episodes", m_completed},
                                  {"total_pushes", m_total_pushes},
                                  {"steps", m_learner.steps()},
                                  {"weights_digest", digest_hex(weights_digest(m_learner.weights()))},
                                  {"dropped_samples", m_samples.dropped()},
                                  {"reason", reason}};
        m_finished = true;
        m_log.summary(m_summary);
        m_log.flush();
        return m_summary;
    }

    // ---------------------------------------------------------------------------------
    // Transport

    namespace
    {
        class Connection;
    }

    struct SessionServer::Impl
    {
        explicit Impl(SessionConfig c) : config(std::move(c)) {}

        SessionConfig config;
        net::io_context ioc{1};
        std::optional<tcp::acceptor> acceptor;
        std::optional<net::steady_timer> heartbeat_timer;
        std::thread io_thread;
        std::thread tick_thread;

        std::ofstream log_file;
        std::unique_ptr<Session> session;

        mutable std::mutex mutex;
        mutable std::condition_variable cv;
        std::shared_ptr<Connection> client;
        bool started = false;
        bool paused = false;
        bool stop_requested = false;
        bool finished = false;
        std::string finish_reason;
        std::chrono::steady_clock::time_point session_start;
        std::chrono::steady_clock::time_point disconnected_at;
        std::int64_t late_ticks = 0;
        std::int64_t heartbeats = 0;
        unsigned short bound_port = 0;

        std::int64_t wall_ms() const
        {
            return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() -
                                                                         session_start)
                .count();
        }

        void do_accept();
        void schedule_heartbeat();
        void on_message(const std::shared_ptr<Connection> &conn, const std::string &text);
        void on_disconnect(const std::shared_ptr<Connection> &conn);
        void send_to_client(nlohmann::json frame);
        void tick_loop();
        // Caller holds `mutex`.
        void finish_locked(const std::string &reason);
    };

    namespace
    {
        class Connection : public std::enable_shared_from_this<Connection>
        {
        public:
            Connection(tcp::socket socket, SessionServer::Impl &server) : m_ws(std::move(socket)), m_server(server) {}

            void run()
            {
                m_ws.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
                m_ws.async_accept(
                    [self = shared_from_this()](beast::error_code ec) {
                        if (!ec)
                        {
                            self->do_read();
                        }
                    });
            }

            // Thread-safe. Stamps session id and this connection's outbound sequence number.
            void send(nlohmann::json frame)
            {
                net::post(m_ws.get_executor(), [self = shared_from_this(), frame = std::move(frame)]() mutable {
                    if (self->m_closed)
                    {
                        return;
                    }
                    frame["session"] = self->m_server.config.session_id;
                    frame["seq"] = ++self->m_out_seq;
                    self->m_queue.push_back(frame.dump());
                    if (self->m_queue.size() == 1)
                    {
                        self->do_write();
                    }
                });
            }

            // Closes once every queued frame is written.
            void close()
            {
                net::post(m_ws.get_executor(), [self = shared_from_this()] {
                    self->m_close_after_flush = true;
                    if (self->m_queue.empty())
                    {
                        self->do_close();
                    }
                });
            }

            std::int64_t &last_inbound_seq() { return m_in_seq; }

        private:
            void do_read()
            {
                m_ws.async_read(m_buffer, [self = shared_from_this()](beast::error_code ec, std::size_t) {
                    if (ec)
                    {
                        self->m_closed = true;
                        self->m_server.on_disconnect(self);
                        return;
                    }
                    std::string text = beast::buffers_to_string(self->m_buffer.data());
                    self->m_buffer.consume(self->m_buffer.size());
                    self->m_server.on_message(self, text);
                    self->do_read();
                });
            }

            void do_write()
            {
                m_ws.text(true);
                m_ws.async_write(net::buffer(m_queue.front()),
                                 [self = shared_from_this()](beast::error_code ec, std::size_t) {
                                     if (ec)
                                     {
                                         self->m_queue.clear();
                                         return;
                                     }
                                     self->m_queue.pop_front();
                                     if (!self->m_queue.empty())
                                     {
                                         self->do_write();
                                     }
                                     else if (self->m_close_after_flush)
                                     {
                                         self->do_close();
                                     }
                                 });
            }

            void do_close()
            {
                if (m_closed || m_close_started)
                {
                    return;
                }
                m_close_started = true;
                m_ws.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
            }

            websocket::stream<beast::tcp_stream> m_ws;
            beast::flat_buffer m_buffer;
            std::deque<std::string> m_queue;
            SessionServer::Impl &m_server;
            std::int64_t m_out_seq = 0;
            std::int64_t m_in_seq = std::numeric_limits<std::int64_t>::min();
            bool m_close_after_flush = false;
            bool m_close_started = false;
            bool m_closed = false;
        };

        nlohmann::json error_frame(const std::string &message)
        {
            return nlohmann::json{{"type", msg::error}, {"message", message}};
        }
    } // namespace

    void SessionServer::Impl::do_accept()
    {
        acceptor->async_accept(net::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
            if (ec)
            {
                return;
            }
            std::make_shared<Connection>(std::move(socket), *this)->run();
            do_accept();
        });
    }

    void SessionServer::Impl::schedule_heartbeat()
    {
        heartbeat_timer->expires_after(config.heartbeat_period);
        heartbeat_timer->async_wait([this](beast::error_code ec) {
            if (ec)
            {
                return;
            }
            std::shared_ptr<Connection> target;
            {
                std::lock_guard lock(mutex);
                target = client;
                if (target)
                {
                    ++heartbeats;
                }
            }
            if (target)
            {
                target->send({{"type", msg::heartbeat}, {"ticks", session->ticks()}});
            }
            schedule_heartbeat();
        });
    }

    void SessionServer::Impl::on_message(const std::shared_ptr<Connection> &conn, const std::string &text)
    {
        ClientMessage m;
        try
        {
            m = parse_client_message(text);
        }
        catch (const ConfigError &e)
        {
            conn->send(error_frame(e.what()));
            return;
        }
        if (m.seq <= conn->last_inbound_seq())
        {
            conn->send(error_frame("sequence number " + std::to_string(m.seq) + " is not increasing"));
            return;
        }
        conn->last_inbound_seq() = m.seq;
        if (m.session != config.session_id)
        {
            conn->send(error_frame("unknown session '" + m.session + "'"));
            return;
        }

        std::unique_lock lock(mutex);
        if (client && client != conn)
        {
            lock.unlock();
            conn->send(error_frame("session '" + m.session + "' already has a client"));
            conn->close();
            return;
        }
        if (finished)
        {
            lock.unlock();
            conn->send(error_frame("session '" + m.session + "' has ended"));
            return;
        }
        if (!client)
        {
            client = conn;
            paused = false;
        }

        switch (m.type)
        {
        case ClientMessageType::start:
            if (!started)
            {
                started = true;
                session_start = std::chrono::steady_clock::now();
                cv.notify_all();
            }
            lock.unlock();
            conn->send({{"type", msg::ack}, {"ack", m.seq}, {"ticks", session->ticks()}});
            break;
        case ClientMessageType::gesture:
            session->deliver_sample(m.roll_deg, m.present, started ? wall_ms() : 0);
            break;
        case ClientMessageType::push:
            session->deliver_push(started ? wall_ms() : 0);
            break;
        case ClientMessageType::stop:
            finish_locked("stopped");
            break;
        }
    }

    void SessionServer::Impl::on_disconnect(const std::shared_ptr<Connection> &conn)
    {
        std::lock_guard lock(mutex);
        if (client == conn)
        {
            client.reset();
            if (started && !finished)
            {
                paused = true;
                disconnected_at = std::chrono::steady_clock::now();
            }
            cv.notify_all();
        }
    }

    void SessionServer::Impl::send_to_client(nlohmann::json frame)
    {
        std::shared_ptr<Connection> target;
        {
            std::lock_guard lock(mutex);
            target = client;
        }
        if (target)
        {
            target->send(std::move(frame));
        }
    }

    void SessionServer::Impl::finish_locked(const std::string &reason)
    {
        if (finished)
        {
            return;
        }
        finished = true;
        finish_reason = reason;
        nlohmann::json summary = session->finish(reason);
        summary["type"] = msg::session_summary;
        if (client)
        {
            client->send(summary);
            client->close();
        }
        cv.notify_all();
    }

    void SessionServer::Impl::tick_loop()
    {
        using clock = std::chrono::steady_clock;
        std::unique_lock lock(mutex);
        cv.wait(lock, [this] { return started || stop_requested; });
        auto next = session_start;
        while (!stop_requested && !finished)
        {
            next += config.tick_period;
            if (cv.wait_until(lock, next, [this] { return stop_requested || finished; }))
            {
                break;
            }
            const auto lateness = clock::now() - next;
            if (lateness > config.tick_period / 2)
            {
                ++late_ticks;
                std::cerr << "session " << config.session_id << ": tick " << session->ticks() << " late by "
                          << std::chrono::duration_cast<std::chrono::milliseconds>(lateness).count() << " ms\n";
            }
            if (paused)
            {
                if (clock::now() - disconnected_at > config.reconnect_grace)
                {
                    finish_locked("client_timeout");
                }
                continue;
            }

            std::vector<nlohmann::json> frames;
            try
            {
                frames = session->tick();
            }
            catch (const std::exception &e)
            {
                std::cerr << "session " << config.session_id << ": runtime fault: " << e.what() << '\n';
                finish_locked(std::string("fault: ") + e.what());
                break;
            }
            auto target = client;
            const bool done = config.max_episodes > 0 && session->completed_episodes() >= config.max_episodes;
            lock.unlock();
            if (target)
            {
                for (auto &frame : frames)
                {
                    target->send(std::move(frame));
                }
            }
            lock.lock();
            if (done)
            {
                finish_locked("max_episodes");
            }
        }
    }

    SessionServer::SessionServer(SessionConfig config) : m_impl(std::make_unique<Impl>(std::move(config)))
    {
        m_impl->config.validate();
    }

    SessionServer::~SessionServer() { stop(); }

    void SessionServer::start()
    {
        Impl &impl = *m_impl;
        std::filesystem::create_directories(impl.config.log_dir);
        impl.log_file.open(log_path(), std::ios::trunc);
        if (!impl.log_file)
        {
            throw std::runtime_error("cannot open session log " + log_path().string());
        }
        impl.session = std::make_unique<Session>(impl.config, impl.log_file);

        beast::error_code ec;
        const auto address = net::ip::make_address(impl.config.listen_address, ec);
        if (ec)
        {
            throw std::runtime_error("bad listen address '" + impl.config.listen_address + "': " + ec.message());
        }
        impl.acceptor.emplace(impl.ioc);
        const tcp::endpoint endpoint{address, impl.config.port};
        impl.acceptor->open(endpoint.protocol(), ec);
        if (!ec)
        {
            impl.acceptor->set_option(net::socket_base::reuse_address(true), ec);
        }
        if (!ec)
        {
            impl.acceptor->bind(endpoint, ec);
        }
        if (!ec)
        {
            impl.acceptor->listen(net::socket_base::max_listen_connections, ec);
        }
        if (ec)
        {
            throw std::runtime_error("cannot listen on " + impl.config.listen_address + ":" +
                                     std::to_string(impl.config.port) + ": " + ec.message());
        }
        impl.bound_port = impl.acceptor->local_endpoint().port();
        impl.heartbeat_timer.emplace(impl.ioc);
        impl.do_accept();
        impl.schedule_heartbeat();
        impl.io_thread = std::thread([&impl] { impl.ioc.run(); });
        impl.tick_thread = std::thread([&impl] { impl.tick_loop(); });
    }

    void SessionServer::stop()
    {
        Impl &impl = *m_impl;
        {
            std::lock_guard lock(impl.mutex);
            if (impl.session && !impl.finished)
            {
                impl.finish_locked("server_stop");
            }
            impl.stop_requested = true;
            impl.cv.notify_all();
        }
        if (impl.tick_thread.joinable())
        {
            impl.tick_thread.join();
        }
        if (impl.io_thread.joinable())
        {
            // Let queued summary frames and close handshakes drain before stopping.
            net::post(impl.ioc, [&impl] {
                beast::error_code ignored;
                if (impl.acceptor)
                {
                    impl.acceptor->close(ignored);
                }
                if (impl.heartbeat_timer)
                {
                    impl.heartbeat_timer->cancel();
                }
            });
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
            impl.ioc.stop();
            impl.io_thread.join();
        }
        if (impl.log_file.is_open())
        {
            impl.log_file.flush();
            impl.log_file.close();
        }
    }

    unsigned short SessionServer::port() const noexcept { return m_impl->bound_port; }

    std::filesystem::path SessionServer::log_path() const
    {
        return m_impl->config.log_dir / (m_impl->config.session_id + ".ndjson");
    }

    ServerStats SessionServer::stats() const
    {
        std::lock_guard lock(m_impl->mutex);
        ServerStats s;
        s.ticks = m_impl->session ? m_impl->session->ticks() : 0;
        s.late_ticks = m_impl->late_ticks;
        s.heartbeats = m_impl->heartbeats;
        s.finished = m_impl->finished;
        s.finish_reason = m_impl->finish_reason;
        return s;
    }

    bool SessionServer::wait_finished(std::chrono::milliseconds timeout) const
    {
        std::unique_lock lock(m_impl->mutex);
        return m_impl->cv.wait_for(lock, timeout, [this] { return m_impl->finished; });
    }
} // namespace siv
