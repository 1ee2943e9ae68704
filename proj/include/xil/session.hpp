#pragma once

// Human-teacher sessions and the line-delimited JSON service around them.
// A session replays the harness' scene and perception streams for its seed,
// so a human who repeats the simulated teacher's moves ends with the same
// memory.

#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <boost/asio.hpp>
#include <nlohmann/json.hpp>

#include "xil/agent.hpp"
#include "xil/dialogue.hpp"
#include "xil/errors.hpp"
#include "xil/harness.hpp"

namespace xil {

struct SessionConfig {
  DomainConfig domain = single_4way();
  Strategy strategy = Strategy::VisGenrExpl;
  Quality quality = Quality::LQ;
  std::uint64_t base_seed = 0;
  int seed = 0;  // index of the experiment seed whose streams are replayed
  AgentConfig agent;
};

// Teacher moves legal in the current phase, for composers.
inline std::vector<std::string> legal_teacher_moves(const DialogueState& s) {
  switch (s.phase) {
    case Phase::AnswerJudged: return {"Correction"};
    case Phase::AwaitWhy: return {"WhyQ"};
    case Phase::ExplanationJudged:
      if (!s.explained) return {"GenericTeach"};
      if (!s.acknowledged) return {"PartNegation", "PartAck"};
      return {"GenericTeach"};
    default: return {};
  }
}

class Session {
 public:
  Session(std::string id, SessionConfig cfg)
      : id_(std::move(id)), cfg_(std::move(cfg)), vocabulary_(domain_lexicon(cfg_.domain)),
        agent_(agent_config(cfg_), initial(cfg_), vocabulary_),
        run_seed_(derive_seed(cfg_.base_seed, {std::uint64_t(cfg_.seed)})) {}
  Session(const Session&) = delete;
  Session& operator=(const Session&) = delete;

  const std::string& id() const { return id_; }
  const Agent& agent() const { return agent_; }
  const std::vector<TranscriptRecord>& transcript() const { return transcript_; }
  int episode() const { return episode_; }

  // Closes the open episode (if any) and starts the next one: the probe is
  // issued and the learner answers.
  void new_episode() {
    if (run_) end_episode();
    ++episode_;
    scene_ = episode_scene(cfg_.domain, run_seed_, episode_);
    rng_ = episode_rng(run_seed_, episode_);
    run_.emplace(agent_, scene_, episode_, rng_, vocabulary_);
    run_->begin();
    known_ = {};
    synced_ = 0;
    sync();
  }

  // Parses a teacher utterance and plays it. Tags without a payload in
  // `refs` fall back to the ones already used in this episode.
  void submit(const std::string& text, const RefMap& refs = {}) {
    if (!run_) throw ConformanceError("no episode in progress");
    RefMap payloads = known_;
    for (const auto& [k, v] : refs) payloads[k] = v;
    const Utterance u = parse_utterance(text, payloads, vocabulary_);
    run_->teacher(u);
    sync();
  }

  void end_episode() {
    if (!run_) throw ConformanceError("no episode in progress");
    run_->end();
    sync();
    run_.reset();
  }

  nlohmann::json view() const {
    using nlohmann::json;
    json v = {{"session", id_},
              {"domain", cfg_.domain.name},
              {"strategy", to_string(cfg_.strategy)},
              {"episode", episode_},
              {"open", run_.has_value()}};
    if (run_) {
      v["phase"] = to_string(run_->state().phase);
      v["legal"] = legal_teacher_moves(run_->state());
      v["can_end"] = run_->can_end();
      v["scene"] = scene_to_json(scene_);
      const auto& last = run_->last_learner_move();
      v["learner"] = {{"surface", last.surface}, {"refs", refs_to_json(last.refs)}};
      json history = json::array();
      for (const auto& r : run_->record().transcript) history.push_back(record_to_json(r));
      v["history"] = history;
    }
    return v;
  }

  // Exemplar counts per concept and the KB in surface form.
  nlohmann::json memory_summary() const {
    using nlohmann::json;
    const auto& m = agent_.memory();
    json counts = json::object();
    for (const auto& [id, s] : m.exemplars.all())
      counts[id] = {{"positive", s.positives.size()}, {"negative", s.negatives.size()}};
    json rules = json::array();
    for (const auto& e : m.kb.entries()) rules.push_back({{"rule", to_string(e.rule)}, {"episode", e.episode}});
    return {{"exemplars", counts}, {"kb", rules}, {"audit_events", m.audit.size()}};
  }

 private:
  static AgentConfig agent_config(const SessionConfig& c) {
    AgentConfig a = c.agent;
    a.strategy = c.strategy;
    return a;
  }

  static Memory initial(const SessionConfig& c) {
    ExperimentConfig e;
    e.domain = c.domain;
    e.quality = c.quality;
    e.base_seed = c.base_seed;
    return seeded_memory(e, c.seed);
  }

  // Copies new transcript lines out of the open episode and remembers the
  // payloads of every tag used so far.
  void sync() {
    const auto& t = run_->record().transcript;
    for (std::size_t i = synced_; i < t.size(); ++i) {
      transcript_.push_back(t[i]);
      for (const auto& [k, v] : t[i].utterance.refs) known_[k] = v;
    }
    synced_ = t.size();
  }

  std::string id_;
  SessionConfig cfg_;
  Lexicon vocabulary_;
  Agent agent_;
  std::uint64_t run_seed_;
  int episode_ = -1;
  TrueScene scene_;
  Rng rng_{0};
  std::optional<EpisodeRun> run_;
  RefMap known_;
  std::vector<TranscriptRecord> transcript_;
  std::size_t synced_ = 0;
};

// ---------------------------------------------------------------------------
// Protocol: one JSON object per line in each direction. Requests carry "op"
// and, except for "create", "session". Replies carry "ok" and either the
// result or "error": {kind, message[, position]}.

class SessionManager {
 public:
  nlohmann::json handle(const nlohmann::json& req) {
    try {
      if (!req.is_object() || !req.contains("op") || !req["op"].is_string())
        return error("malformed", "request needs a string field 'op'");
      const std::string op = req["op"];
      if (op == "create") return create(req);
      if (op == "list") {
        std::lock_guard lock(mu_);
        nlohmann::json ids = nlohmann::json::array();
        for (const auto& [id, s] : sessions_) ids.push_back(id);
        return {{"ok", true}, {"sessions", ids}};
      }
      auto entry = find(req);
      if (!entry) return error("lookup", "unknown session");
      std::lock_guard lock(entry->mu);
      Session& s = *entry->session;
      if (op == "view") return ok(s.view());
      if (op == "new_episode") {
        s.new_episode();
        return ok(s.view());
      }
      if (op == "end_episode") {
        s.end_episode();
        return ok(s.view());
      }
      if (op == "submit") {
        if (!req.contains("text") || !req["text"].is_string()) return error("malformed", "submit needs 'text'");
        s.submit(req["text"].get<std::string>(), req.contains("refs") ? refs_from_json(req["refs"]) : RefMap{});
        return ok(s.view());
      }
      if (op == "memory") {
        nlohmann::json r = {{"ok", true}, {"summary", s.memory_summary()}};
        if (req.value("full", false)) r["memory"] = memory_to_json(s.agent().memory());
        return r;
      }
      if (op == "transcript") {
        nlohmann::json lines = nlohmann::json::array();
        for (const auto& t : s.transcript()) lines.push_back(record_to_json(t));
        return {{"ok", true}, {"transcript", lines}};
      }
      if (op == "close") {
        std::lock_guard g(mu_);
        sessions_.erase(s.id());
        return {{"ok", true}};
      }
      return error("malformed", "unknown op '" + op + "'");
    } catch (const ParseError& e) {
      auto r = error("parse", e.what());
      r["error"]["position"] = e.position();
      return r;
    } catch (const ConformanceError& e) {
      return error("conformance", e.what());
    } catch (const ConfigurationError& e) {
      return error("configuration", e.what());
    } catch (const nlohmann::json::exception& e) {
      return error("malformed", e.what());
    } catch (const std::exception& e) {
      return error("internal", e.what());
    }
  }

  // One request line in, one reply line out (without the newline).
  std::string handle_line(const std::string& line) {
    nlohmann::json req;
    try {
      req = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      return error("malformed", e.what()).dump();
    }
    return handle(req).dump();
  }

 private:
  struct Entry {
    std::unique_ptr<Session> session;
    std::mutex mu;
  };

  static nlohmann::json ok(nlohmann::json view) { return {{"ok", true}, {"view", std::move(view)}}; }
  static nlohmann::json error(const std::string& kind, const std::string& message) {
    return {{"ok", false}, {"error", {{"kind", kind}, {"message", message}}}};
  }

  nlohmann::json create(const nlohmann::json& req) {
    SessionConfig c;
    c.domain = load_domain(req.value("domain", std::string("single_4way")));
    c.strategy = strategy_from_string(req.value("strategy", std::string("VisGenrExpl")));
    c.quality = quality_from_string(req.value("quality", std::string("LQ")));
    c.base_seed = req.value("base_seed", std::uint64_t{0});
    c.seed = req.value("seed", 0);
    auto entry = std::make_shared<Entry>();
    std::string id;
    {
      std::lock_guard lock(mu_);
      id = "s" + std::to_string(++next_);
    }
    entry->session = std::make_unique<Session>(id, c);
    entry->session->new_episode();
    auto view = entry->session->view();
    std::lock_guard lock(mu_);
    sessions_[id] = std::move(entry);
    return ok(std::move(view));
  }

  std::shared_ptr<Entry> find(const nlohmann::json& req) {
    if (!req.contains("session") || !req["session"].is_string()) return nullptr;
    std::lock_guard lock(mu_);
    auto it = sessions_.find(req["session"].get<std::string>());
    return it == sessions_.end() ? nullptr : it->second;
  }

  std::mutex mu_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  int next_ = 0;
};

// ---------------------------------------------------------------------------
// TCP line server

namespace detail {

class LineConnection : public std::enable_shared_from_this<LineConnection> {
 public:
  LineConnection(boost::asio::ip::tcp::socket socket, SessionManager& manager)
      : socket_(std::move(socket)), manager_(manager) {}

  void start() { read(); }

 private:
  void read() {
    auto self = shared_from_this();
    boost::asio::async_read_until(socket_, buffer_, '\n', [this, self](boost::system::error_code ec, std::size_t n) {
      if (ec) return;
      std::string line(boost::asio::buffers_begin(buffer_.data()), boost::asio::buffers_begin(buffer_.data()) + n);
      buffer_.consume(n);
      while (!line.empty() && (line.back() == '\n' || line.back() == '\r')) line.pop_back();
      if (!line.empty()) {
        const bool idle = out_.empty();
        out_.push_back(manager_.handle_line(line) + "\n");
        if (idle) write();
      }
      read();
    });
  }

  void write() {
    auto self = shared_from_this();
    boost::asio::async_write(socket_, boost::asio::buffer(out_.front()),
                             [this, self](boost::system::error_code ec, std::size_t) {
                               if (ec) return;
                               out_.pop_front();
                               if (!out_.empty()) write();
                             });
  }

  boost::asio::ip::tcp::socket socket_;
  SessionManager& manager_;
  boost::asio::streambuf buffer_;
  std::deque<std::string> out_;
};

}  // namespace detail

// Accepts connections on host:port and answers each request line. Runs on
// the caller's io_context; everything is handled on that one thread.
class LineServer {
 public:
  LineServer(boost::asio::io_context& io, const std::string& bind, SessionManager& manager)
      : acceptor_(io), manager_(manager) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw ConfigurationError("bind address must be host:port, got '" + bind + "'");
    boost::asio::ip::tcp::resolver resolver(io);
    boost::system::error_code ec;
    const auto results = resolver.resolve(bind.substr(0, colon), bind.substr(colon + 1), ec);
    if (ec || results.empty()) throw ConfigurationError("cannot resolve '" + bind + "': " + ec.message());
    const auto ep = results.begin()->endpoint();
    acceptor_.open(ep.protocol());
    acceptor_.set_option(boost::asio::socket_base::reuse_address(true));
    acceptor_.bind(ep, ec);
    if (ec) throw ConfigurationError("cannot bind '" + bind + "': " + ec.message());
    acceptor_.listen();
    accept();
  }

  unsigned short port() const { return acceptor_.local_endpoint().port(); }
  void close() { acceptor_.close(); }

 private:
  void accept() {
    acceptor_.async_accept([this](boost::system::error_code ec, boost::asio::ip::tcp::socket socket) {
      if (ec) return;
      std::make_shared<detail::LineConnection>(std::move(socket), manager_)->start();
      accept();
    });
  }

  boost::asio::ip::tcp::acceptor acceptor_;
  SessionManager& manager_;
};

}  // namespace xil
