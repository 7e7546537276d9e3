#include "siv/experiment_runner.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace siv
{
    namespace
    {
        std::uint64_t splitmix64(std::uint64_t x)
        {
            x += 0x9e3779b97f4a7c15ULL;
            x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
            x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
            return x ^ (x >> 31);
        }

        constexpr std::uint64_t kCellLabel = 0xce11;
        constexpr std::uint64_t kEpisodeLabel = 0xe915;
        constexpr std::uint64_t kShuffleLabel = 0xb11d;
        constexpr std::uint64_t kEnvStream = 1;
        constexpr std::uint64_t kUserStream = 2;

        std::string format_double(double v)
        {
            char buf[64];
            auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
            return std::string(buf, end);
        }

        std::vector<std::string> split(const std::string &s, char sep)
        {
            std::vector<std::string> out;
            std::string item;
            std::istringstream in(s);
            while (std::getline(in, item, sep))
            {
                out.push_back(item);
            }
            if (!s.empty() && s.back() == sep)
            {
                out.emplace_back();
            }
            return out;
        }

        void write_file(const std::filesystem::path &path, const std::string &content)
        {
            std::ofstream out(path, std::ios::binary | std::ios::trunc);
            if (!out)
            {
                throw std::runtime_error("cannot write " + path.string());
            }
            out << content;
            if (!out)
            {
                throw std::runtime_error("write failed for " + path.string());
            }
        }
    } // namespace

    std::vector<std::string> ExperimentSpec::violations() const
    {
        std::vector<std::string> errors;
        if (variants.empty())
        {
            errors.emplace_back("spec: need at least one variant");
        }
        if (std::set<Variant>(variants.begin(), variants.end()).size() != variants.size())
        {
            errors.emplace_back("spec: duplicate variants");
        }
        if (runs < 1)
        {
            errors.emplace_back("spec: runs must be >= 1");
        }
        if (episodes < 1)
        {
            errors.emplace_back("spec: episodes must be >= 1");
        }
        if (grips < 2)
        {
            errors.emplace_back("spec: grips must be >= 2");
        }
        if (static_cast<std::size_t>(std::max(grips, 0)) != env.grip_sizes.size())
        {
            errors.emplace_back("spec: grips does not match env.grip_sizes length");
        }
        if (object_sizes != env.object_sizes)
        {
            errors.emplace_back("spec: object_sizes does not match env.object_sizes");
        }
        if (num_tilings < 1)
        {
            errors.emplace_back("spec: num_tilings must be >= 1");
        }
        if (tiles_per_dim < 1)
        {
            errors.emplace_back("spec: tiles_per_dim must be >= 1");
        }
        for (const auto &group : {env.violations(), agent.violations(), user.violations()})
        {
            errors.insert(errors.end(), group.begin(), group.end());
        }
        if (env.violations().empty())
        {
            auto pref_errors = preferences.violations(env);
            errors.insert(errors.end(), pref_errors.begin(), pref_errors.end());
        }
        return errors;
    }

    void ExperimentSpec::validate() const
    {
        auto errors = violations();
        if (!errors.empty())
        {
            throw ConfigError(std::move(errors));
        }
    }

    ExperimentSpec default_spec()
    {
        ExperimentSpec spec;
        spec.env.grip_sizes = default_grip_sizes(static_cast<std::size_t>(spec.grips));
        spec.env.object_sizes = spec.object_sizes;
        spec.preferences = default_preferences(spec.env);
        return spec;
    }

    void to_json(nlohmann::json &j, const ExperimentSpec &s)
    {
        std::vector<std::string> variants;
        for (auto v : s.variants)
        {
            variants.push_back(to_string(v));
        }
        j = nlohmann::json{{"variants", variants},
                           {"runs", s.runs},
                           {"episodes", s.episodes},
                           {"grips", s.grips},
                           {"object_sizes", s.object_sizes},
                           {"env", s.env},
                           {"agent", s.agent},
                           {"user", s.user},
                           {"preferences", s.preferences},
                           {"master_seed", s.master_seed},
                           {"blind_shuffle", s.blind_shuffle},
                           {"num_tilings", s.num_tilings},
                           {"tiles_per_dim", s.tiles_per_dim}};
    }

    void from_json(const nlohmann::json &j, ExperimentSpec &s)
    {
        s = ExperimentSpec{};
        if (j.contains("variants"))
        {
            s.variants.clear();
            for (const auto &name : j.at("variants"))
            {
                s.variants.push_back(variant_from_string(name.get<std::string>()));
            }
        }
        s.runs = j.value("runs", s.runs);
        s.episodes = j.value("episodes", s.episodes);
        s.grips = j.value("grips", s.grips);
        s.object_sizes = j.value("object_sizes", s.object_sizes);
        s.master_seed = j.value("master_seed", s.master_seed);
        s.blind_shuffle = j.value("blind_shuffle", s.blind_shuffle);
        s.num_tilings = j.value("num_tilings", s.num_tilings);
        s.tiles_per_dim = j.value("tiles_per_dim", s.tiles_per_dim);

        const nlohmann::json env = j.value("env", nlohmann::json::object());
        env.get_to(s.env);
        if (!env.contains("grip_sizes"))
        {
            s.env.grip_sizes = default_grip_sizes(static_cast<std::size_t>(std::max(s.grips, 0)));
        }
        if (!env.contains("object_sizes"))
        {
            s.env.object_sizes = s.object_sizes;
        }
        if (j.contains("agent"))
        {
            j.at("agent").get_to(s.agent);
        }
        if (j.contains("user"))
        {
            j.at("user").get_to(s.user);
        }
        if (j.contains("preferences"))
        {
            j.at("preferences").get_to(s.preferences);
        }
        else if (s.env.violations().empty())
        {
            s.preferences = default_preferences(s.env);
        }
    }

    ExperimentSpec load_spec(const std::filesystem::path &path)
    {
        std::ifstream in(path);
        if (!in)
        {
            throw ConfigError("cannot open spec file " + path.string());
        }
        nlohmann::json j;
        try
        {
            j = nlohmann::json::parse(in);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw ConfigError(path.string() + ": " + e.what());
        }
        ExperimentSpec spec;
        try
        {
            j.get_to(spec);
        }
        catch (const nlohmann::json::exception &e)
        {
            throw ConfigError(path.string() + ": " + e.what());
        }
        spec.validate();
        return spec;
    }

    std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts)
    {
        std::uint64_t h = 0x5eed5eed5eed5eedULL;
        for (std::uint64_t p : parts)
        {
            h = splitmix64(h ^ splitmix64(p));
        }
        return h;
    }

    std::uint64_t cell_seed(std::uint64_t master, Variant variant, int run)
    {
        return mix_seed({master, kCellLabel, static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(run)});
    }

    std::uint64_t episode_seed(std::uint64_t master, Variant variant, int run, int episode)
    {
        return mix_seed({master, kEpisodeLabel, static_cast<std::uint64_t>(variant), static_cast<std::uint64_t>(run),
                         static_cast<std::uint64_t>(episode)});
    }

    SyntheticFeedback::SyntheticFeedback(PreferenceTable prefs, UserModelConfig config)
        : m_user(std::move(prefs), config, config.seed)
    {
    }

    void SyntheticFeedback::begin_episode(std::uint64_t episode_seed)
    {
        m_user = SyntheticUser(m_user.preferences(), m_user.config(), mix_seed({episode_seed, kUserStream}));
    }

    TickFeedback SyntheticFeedback::poll(std::int64_t tick, const EnvState &state)
    {
        m_user.observe(tick, state);
        TickFeedback fb;
        fb.sample = m_user.latest(tick);
        fb.push = m_user.push_for(tick, state);
        return fb;
    }

    ReplayFeedback::ReplayFeedback(const GestureLog &log)
        : m_gestures(log.samples, log.end_ms), m_pushes(log.pushes, log.end_ms)
    {
    }

    TickFeedback ReplayFeedback::poll(std::int64_t tick, const EnvState & /*state*/)
    {
        TickFeedback fb;
        fb.sample = m_gestures.latest(tick);
        fb.push = m_pushes.drain(tick);
        return fb;
    }

    nlohmann::json to_json(const StepRecord &r, const EnvConfig &env)
    {
        return nlohmann::json{{"step", r.step},
                              {"tick", r.tick},
                              {"episode", r.episode},
                              {"p", r.position},
                              {"grip", r.grip},
                              {"object", env.object_sizes.at(r.object)},
                              {"action", action_name(r.action, env)},
                              {"reward", r.reward},
                              {"events", event_names(r.events)},
                              {"phi", r.features.values}};
    }

    EpisodeDriver::EpisodeDriver(Variant variant, EnvConfig env, GraspRule rule, SarsaLearner &learner, bool learn,
                                 bool greedy)
        : m_variant(variant), m_env(std::move(env)), m_rule(std::move(rule)), m_learner(&learner), m_learn(learn),
          m_greedy(greedy)
    {
        m_env.validate();
        if (learner.num_actions() != m_env.num_actions())
        {
            throw ConfigError("episode driver: learner action count does not match environment");
        }
    }

    void EpisodeDriver::begin(std::uint64_t episode_seed, FeedbackSource &feedback, int episode_index)
    {
        Rng env_rng(mix_seed({episode_seed, kEnvStream}));
        m_state = reset(m_env, env_rng);
        m_learner->begin_episode();
        feedback.begin_episode(episode_seed);
        m_record = EpisodeRecord{};
        m_record.variant = m_variant;
        m_record.episode = episode_index;
        m_record.seed = episode_seed;
        m_episode = episode_index;
        m_pending.reset();
        m_last_reward = 0.0;
        m_active = true;
    }

    StepRecord EpisodeDriver::tick(std::int64_t tick, FeedbackSource &feedback)
    {
        if (!m_active)
        {
            throw ContractViolation("episode driver: tick without an active episode");
        }
        const TickFeedback fb = feedback.poll(tick, m_state);
        const double hand = value(hand_state(fb.sample));
        FeatureVector features = observe(m_state, m_variant, hand, m_env);
        const ActionMask mask = available_actions(m_state, m_env);
        const std::size_t action = m_greedy ? m_learner->select_greedy(features, mask) : m_learner->select(features, mask);

        if (m_pending && m_learn)
        {
            m_learner->update(Transition{m_pending->features, m_pending->action, m_pending->reward, features, action, false});
        }
        m_pending.reset();

        const StepOutcome out = step(m_state, action, fb.push, m_env, m_rule);

        StepRecord rec;
        rec.tick = tick;
        rec.episode = m_episode;
        rec.step = m_state.step;
        rec.position = m_state.position;
        rec.grip = m_state.grip;
        rec.object = m_state.object;
        rec.action = action;
        rec.reward = out.reward;
        rec.events = out.events;
        rec.features = features;
        rec.sample = fb.sample;
        rec.push = fb.push;
        rec.next = out.state;

        m_state = out.state;
        m_last_reward = out.reward;
        ++m_record.steps;
        m_record.total_reward += out.reward;
        if (out.events.push_penalized)
        {
            ++m_record.pushes;
        }

        if (out.terminal)
        {
            if (m_learn)
            {
                m_learner->update(Transition{features, action, out.reward, features, action, true});
            }
            m_active = false;
        }
        else if (m_record.steps >= m_env.episode_cap)
        {
            m_record.truncated = true;
            m_active = false;
        }
        else
        {
            m_pending = Pending{std::move(features), action, out.reward};
        }
        return rec;
    }

    EpisodeRecord run_episode(const EpisodeContext &ctx, SarsaLearner &learner, FeedbackSource &feedback,
                              const StepSink &sink, std::int64_t *next_tick)
    {
        EpisodeDriver driver(ctx.variant, ctx.env, ctx.rule, learner, ctx.learn, ctx.greedy);
        driver.begin(ctx.seed, feedback, ctx.episode);
        std::int64_t tick = ctx.start_tick;
        while (driver.active())
        {
            const StepRecord rec = driver.tick(tick++, feedback);
            if (sink)
            {
                sink(rec);
            }
        }
        if (next_tick)
        {
            *next_tick = tick;
        }
        EpisodeRecord record = driver.record();
        record.run = ctx.run;
        return record;
    }

    const VariantMetrics *RunMetrics::find(Variant v) const
    {
        for (const auto &m : variants)
        {
            if (m.variant == v)
            {
                return &m;
            }
        }
        return nullptr;
    }

    RunMetrics aggregate(std::vector<EpisodeRecord> records)
    {
        std::stable_sort(records.begin(), records.end(), [](const EpisodeRecord &a, const EpisodeRecord &b) {
            return std::tie(a.variant, a.run, a.episode) < std::tie(b.variant, b.run, b.episode);
        });
        RunMetrics metrics;
        std::size_t i = 0;
        while (i < records.size())
        {
            VariantMetrics vm;
            vm.variant = records[i].variant;
            while (i < records.size() && records[i].variant == vm.variant)
            {
                const int run = records[i].run;
                std::int64_t steps = 0;
                std::int64_t pushes = 0;
                std::int64_t count = 0;
                while (i < records.size() && records[i].variant == vm.variant && records[i].run == run)
                {
                    steps += records[i].steps;
                    pushes += records[i].pushes;
                    vm.total_reward += records[i].total_reward;
                    ++count;
                    ++i;
                }
                vm.runs.push_back(run);
                vm.average_steps_per_run.push_back(static_cast<double>(steps) / static_cast<double>(count));
                vm.average_pushes_per_run.push_back(static_cast<double>(pushes) / static_cast<double>(count));
                vm.total_steps += steps;
                vm.total_pushes += pushes;
            }
            metrics.variants.push_back(std::move(vm));
        }
        return metrics;
    }

    std::vector<std::pair<Variant, int>> execution_order(const ExperimentSpec &spec)
    {
        std::vector<std::pair<Variant, int>> cells;
        for (Variant v : spec.variants)
        {
            for (int r = 0; r < spec.runs; ++r)
            {
                cells.emplace_back(v, r);
            }
        }
        if (spec.blind_shuffle)
        {
            Rng rng(mix_seed({spec.master_seed, kShuffleLabel}));
            std::shuffle(cells.begin(), cells.end(), rng);
        }
        return cells;
    }

    namespace
    {
        SessionHeader cell_header(const ExperimentSpec &spec, Variant variant, int run)
        {
            SessionHeader h;
            h.session_id = to_string(variant) + "-run" + std::to_string(run);
            h.variant = variant;
            h.master_seed = spec.master_seed;
            h.run = run;
            h.env = spec.env;
            h.agent = spec.agent;
            h.agent.seed = cell_seed(spec.master_seed, variant, run);
            h.preferences = spec.preferences;
            h.num_tilings = spec.num_tilings;
            h.tiles_per_dim = spec.tiles_per_dim;
            return h;
        }

        std::vector<EpisodeRecord> run_cell(const ExperimentSpec &spec, Variant variant, int run,
                                            const std::optional<std::filesystem::path> &log_dir)
        {
            const SessionHeader header = cell_header(spec, variant, run);
            SarsaLearner learner(tiling_for(variant, spec.env, spec.num_tilings, spec.tiles_per_dim), header.agent,
                                 spec.env.num_actions());
            SyntheticFeedback feedback(spec.preferences, spec.user);
            EpisodeDriver driver(variant, spec.env, preference_rule(spec.preferences), learner);

            std::ofstream log_file;
            SessionLogWriter log;
            if (log_dir)
            {
                const auto path = *log_dir / (header.session_id + ".ndjson");
                log_file.open(path, std::ios::trunc);
                if (!log_file)
                {
                    throw std::runtime_error("cannot write " + path.string());
                }
                log = SessionLogWriter(log_file);
                log.header(header);
            }

            std::vector<EpisodeRecord> records;
            std::int64_t tick = 0;
            for (int e = 0; e < spec.episodes; ++e)
            {
                driver.begin(episode_seed(spec.master_seed, variant, run, e), feedback, e);
                while (driver.active())
                {
                    const StepRecord rec = driver.tick(tick++, feedback);
                    if (log_dir)
                    {
                        log.sample(rec.sample);
                        if (rec.push)
                        {
                            log.push(*rec.push);
                        }
                        log.step(rec, spec.env);
                    }
                }
                EpisodeRecord record = driver.record();
                record.run = run;
                if (log_dir)
                {
                    log.episode_end(record);
                }
                records.push_back(record);
            }
            if (log_dir)
            {
                log.summary({{"ticks", tick},
                             {"end_ms", tick_time_ms(tick - 1)},
                             {"episodes", spec.episodes},
                             {"steps", learner.steps()},
                             {"weights_digest", digest_hex(weights_digest(learner.weights()))}});
                log.flush();
            }
            return records;
        }
    } // namespace

    ExperimentResult run_experiment(const ExperimentSpec &spec, const ExperimentOptions &options)
    {
        spec.validate();
        if (options.log_dir)
        {
            std::filesystem::create_directories(*options.log_dir);
        }
        ExperimentResult result;
        result.execution_order = execution_order(spec);

        const auto &cells = result.execution_order;
        std::vector<std::vector<EpisodeRecord>> outputs(cells.size());
        const int workers = std::clamp(options.parallel, 1, static_cast<int>(cells.size()));
        if (workers == 1)
        {
            for (std::size_t i = 0; i < cells.size(); ++i)
            {
                outputs[i] = run_cell(spec, cells[i].first, cells[i].second, options.log_dir);
            }
        }
        else
        {
            std::atomic<std::size_t> next{0};
            std::exception_ptr failure;
            std::mutex failure_mutex;
            std::vector<std::thread> pool;
            for (int w = 0; w < workers; ++w)
            {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < cells.size(); i = next++)
                    {
                        try
                        {
                            outputs[i] = run_cell(spec, cells[i].first, cells[i].second, options.log_dir);
                        }
                        catch (...)
                        {
                            std::lock_guard lock(failure_mutex);
                            if (!failure)
                            {
                                failure = std::current_exception();
                            }
                        }
                    }
                });
            }
            for (auto &t : pool)
            {
                t.join();
            }
            if (failure)
            {
                std::rethrow_exception(failure);
            }
        }

        for (auto &out : outputs)
        {
            result.records.insert(result.records.end(), out.begin(), out.end());
        }
        std::stable_sort(result.records.begin(), result.records.end(),
                         [](const EpisodeRecord &a, const EpisodeRecord &b) {
                             return std::tie(a.variant, a.run, a.episode) < std::tie(b.variant, b.run, b.episode);
                         });
        result.metrics = aggregate(result.records);
        return result;
    }

    std::string records_csv(const std::vector<EpisodeRecord> &records)
    {
        std::string out = "variant,run,episode,steps,pushes,total_reward,truncated,seed\n";
        for (const auto &r : records)
        {
            out += to_string(r.variant) + ',' + std::to_string(r.run) + ',' + std::to_string(r.episode) + ',' +
                   std::to_string(r.steps) + ',' + std::to_string(r.pushes) + ',' + format_double(r.total_reward) +
                   ',' + (r.truncated ? "1" : "0") + ',' + std::to_string(r.seed) + '\n';
        }
        return out;
    }

    std::vector<EpisodeRecord> parse_records_csv(const std::string &text)
    {
        std::istringstream in(text);
        std::string line;
        if (!std::getline(in, line) || line.rfind("variant,run,episode", 0) != 0)
        {
            throw ConfigError("records csv: missing header");
        }
        std::vector<EpisodeRecord> records;
        std::size_t line_no = 1;
        while (std::getline(in, line))
        {
            ++line_no;
            if (line.empty())
            {
                continue;
            }
            const auto fields = split(line, ',');
            if (fields.size() != 8)
            {
                throw ConfigError("records csv: line " + std::to_string(line_no) + " has " +
                                  std::to_string(fields.size()) + " fields, expected 8");
            }
            try
            {
                EpisodeRecord r;
                r.variant = variant_from_string(fields[0]);
                r.run = std::stoi(fields[1]);
                r.episode = std::stoi(fields[2]);
                r.steps = std::stoll(fields[3]);
                r.pushes = std::stoll(fields[4]);
                r.total_reward = std::stod(fields[5]);
                r.truncated = fields[6] == "1";
                r.seed = std::stoull(fields[7]);
                records.push_back(r);
            }
            catch (const std::logic_error &e)
            {
                throw ConfigError("records csv: line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return records;
    }

    nlohmann::json metrics_json(const RunMetrics &metrics)
    {
        nlohmann::json variants = nlohmann::json::array();
        for (const auto &m : metrics.variants)
        {
            variants.push_back({{"variant", to_string(m.variant)},
                                {"runs", m.runs},
                                {"average_steps_per_run", m.average_steps_per_run},
                                {"average_pushes_per_run", m.average_pushes_per_run},
                                {"total_steps", m.total_steps},
                                {"total_reward", m.total_reward},
                                {"total_pushes", m.total_pushes}});
        }
        return nlohmann::json{{"variants", variants}};
    }

    void export_plots(const RunMetrics &metrics, const std::filesystem::path &dir)
    {
        std::filesystem::create_directories(dir);
        std::string a = "variant,run,average_steps\n";
        std::string b = "variant,run,average_pushes\n";
        std::string c = "variant,total_steps\n";
        std::string d = "variant,total_reward\n";
        std::string e = "variant,total_pushes\n";
        for (const auto &m : metrics.variants)
        {
            const std::string name = to_string(m.variant);
            for (std::size_t i = 0; i < m.runs.size(); ++i)
            {
                a += name + ',' + std::to_string(m.runs[i]) + ',' + format_double(m.average_steps_per_run[i]) + '\n';
                b += name + ',' + std::to_string(m.runs[i]) + ',' + format_double(m.average_pushes_per_run[i]) + '\n';
            }
            c += name + ',' + std::to_string(m.total_steps) + '\n';
            d += name + ',' + format_double(m.total_reward) + '\n';
            e += name + ',' + std::to_string(m.total_pushes) + '\n';
        }
        write_file(dir / "panel_a_average_steps_per_run.csv", a);
        write_file(dir / "panel_b_average_pushes_per_run.csv", b);
        write_file(dir / "panel_c_total_steps.csv", c);
        write_file(dir / "panel_d_total_reward.csv", d);
        write_file(dir / "panel_e_total_pushes.csv", e);
    }

    void export_results(const std::vector<EpisodeRecord> &records, const RunMetrics &metrics,
                        const std::filesystem::path &dir)
    {
        std::error_code ec;
        std::filesystem::create_directories(dir, ec);
        if (ec)
        {
            throw std::runtime_error("cannot create " + dir.string() + ": " + ec.message());
        }
        write_file(dir / "records.csv", records_csv(records));
        write_file(dir / "metrics.json", metrics_json(metrics).dump(2) + "\n");
        export_plots(metrics, dir);
    }

    void to_json(nlohmann::json &j, const SessionHeader &h)
    {
        j = nlohmann::json{{"session_id", h.session_id},
                           {"variant", to_string(h.variant)},
                           {"master_seed", h.master_seed},
                           {"run", h.run},
                           {"env", h.env},
                           {"agent", h.agent},
                           {"preferences", h.preferences},
                           {"num_tilings", h.num_tilings},
                           {"tiles_per_dim", h.tiles_per_dim}};
    }

    void from_json(const nlohmann::json &j, SessionHeader &h)
    {
        h.session_id = j.value("session_id", std::string{});
        h.variant = variant_from_string(j.at("variant").get<std::string>());
        h.master_seed = j.at("master_seed").get<std::uint64_t>();
        h.run = j.value("run", 0);
        j.at("env").get_to(h.env);
        j.at("agent").get_to(h.agent);
        j.at("preferences").get_to(h.preferences);
        h.num_tilings = j.value("num_tilings", 8);
        h.tiles_per_dim = j.value("tiles_per_dim", 8);
    }

    void SessionLogWriter::header(const SessionHeader &h) { write({{"session", h}}); }
    void SessionLogWriter::sample(const HandSample &s) { write(to_record(s)); }
    void SessionLogWriter::push(const PushEvent &p) { write(to_record(p)); }
    void SessionLogWriter::step(const StepRecord &r, const EnvConfig &env) { write(to_json(r, env)); }

    void SessionLogWriter::episode_end(const EpisodeRecord &r)
    {
        write({{"episode_end",
                {{"episode", r.episode},
                 {"steps", r.steps},
                 {"pushes", r.pushes},
                 {"reward", r.total_reward},
                 {"truncated", r.truncated}}}});
    }

    void SessionLogWriter::summary(const nlohmann::json &summary) { write({{"session_summary", summary}}); }

    void SessionLogWriter::write(const nlohmann::json &line)
    {
        if (m_out)
        {
            *m_out << line.dump() << '\n';
        }
    }

    void SessionLogWriter::flush()
    {
        if (m_out)
        {
            m_out->flush();
        }
    }

    std::string digest_hex(std::uint64_t digest)
    {
        std::ostringstream out;
        out << std::hex;
        out.width(16);
        out.fill('0');
        out << digest;
        return out.str();
    }

    ReplayReport replay_log(const std::vector<nlohmann::json> &records)
    {
        std::optional<SessionHeader> header;
        std::optional<nlohmann::json> summary;
        std::vector<nlohmann::json> logged_steps;
        for (const auto &r : records)
        {
            if (!r.is_object())
            {
                continue;
            }
            if (r.contains("session"))
            {
                header = r.at("session").get<SessionHeader>();
            }
            else if (r.contains("session_summary"))
            {
                summary = r.at("session_summary");
            }
            else if (r.contains("step") && r.contains("action"))
            {
                logged_steps.push_back(r);
            }
        }
        if (!header)
        {
            throw ConfigError("replay: log has no session header");
        }

        GestureLog gestures = gesture_log_from_records(records);
        std::int64_t ticks = 0;
        if (summary && summary->contains("ticks"))
        {
            ticks = summary->at("ticks").get<std::int64_t>();
            if (summary->contains("end_ms"))
            {
                gestures.end_ms = summary->at("end_ms").get<std::int64_t>();
            }
        }
        else if (!logged_steps.empty())
        {
            ticks = logged_steps.back().at("tick").get<std::int64_t>() + 1;
        }
        if (ticks > 0)
        {
            gestures.end_ms = std::max(gestures.end_ms.value_or(0), tick_time_ms(ticks - 1));
        }

        SarsaLearner learner(tiling_for(header->variant, header->env, header->num_tilings, header->tiles_per_dim),
                             header->agent, header->env.num_actions());
        ReplayFeedback feedback(gestures);
        EpisodeDriver driver(header->variant, header->env, preference_rule(header->preferences), learner);

        ReplayReport report;
        int episode = 0;
        for (std::int64_t tick = 0; tick < ticks; ++tick)
        {
            if (!driver.active())
            {
                driver.begin(episode_seed(header->master_seed, header->variant, header->run, episode), feedback,
                             episode);
                ++episode;
            }
            report.steps.push_back(to_json(driver.tick(tick, feedback), header->env));
        }
        report.ticks = static_cast<std::size_t>(ticks);
        report.weights = learner.weights();
        report.weights_digest = weights_digest(learner.weights());
        if (summary && summary->contains("weights_digest"))
        {
            report.recorded_digest = std::stoull(summary->at("weights_digest").get<std::string>(), nullptr, 16);
        }

        report.identical = true;
        if (report.steps.size() != logged_steps.size())
        {
            report.identical = false;
            report.mismatch = "step count differs: replayed " + std::to_string(report.steps.size()) + ", logged " +
                              std::to_string(logged_steps.size());
        }
        const std::size_t n = std::min(report.steps.size(), logged_steps.size());
        for (std::size_t i = 0; i < n && report.identical; ++i)
        {
            ++report.steps_compared;
            if (report.steps[i] != logged_steps[i])
            {
                report.identical = false;
                report.mismatch = "step " + std::to_string(i) + " differs: replayed " + report.steps[i].dump() +
                                  ", logged " + logged_steps[i].dump();
            }
        }
        if (report.identical && report.recorded_digest && *report.recorded_digest != report.weights_digest)
        {
            report.identical = false;
            report.mismatch = "final weight digest differs";
        }
        return report;
    }
} // namespace siv
