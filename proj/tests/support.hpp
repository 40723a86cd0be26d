#pragma once

#include "oracles.hpp"

#include "polaudit/corpus.hpp"
#include "polaudit/io.hpp"
#include "polaudit/mock_chat.hpp"
#include "polaudit/mock_stance.hpp"
#include "polaudit/pipeline.hpp"
#include "polaudit/stance.hpp"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

namespace testing_support {

namespace fs = std::filesystem;
using namespace polaudit;

inline fs::path source_dir() { return fs::path(POLAUDIT_SOURCE_DIR); }
inline fs::path data_path(const std::string& rel) { return source_dir() / "data" / rel; }
inline fs::path fixture_path(const std::string& rel) { return source_dir() / "tests" / "fixtures" / rel; }

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("polaudit-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  fs::path path_;
};

inline std::vector<oracle::Prop> to_oracle(const corpus::Corpus& c) {
  std::vector<oracle::Prop> out;
  for (const auto& p : c.propositions())
    out.push_back({p.id, std::string(to_string(p.source)), std::string(to_string(p.issue)),
                   std::string(to_string(p.leaning)), std::string(to_string(p.variant))});
  return out;
}

inline std::vector<oracle::Rec> to_oracle(const std::vector<stance::StanceRecord>& recs) {
  std::vector<oracle::Rec> out;
  for (const auto& r : recs)
    out.push_back({r.key.proposition_id, r.key.prefix_key, r.key.model_id, std::string(to_string(r.label)),
                   std::string(stance::to_string(r.method))});
  return out;
}

inline const std::vector<std::string>& prefix_keys() {
  static const std::vector<std::string> keys = {"likert", "please_respond", "please_opinion", "respond", "opinion",
                                                "emotion_happy", "truth", "emotion_important", "name", "baseline"};
  return keys;
}

/// Random stance records over `corpus`: up to `max_records` with random
/// proposition, prefix, model, label and method. Keys are unique.
inline std::vector<stance::StanceRecord> random_records(const corpus::Corpus& corpus, std::mt19937_64& rng,
                                                        std::size_t max_records,
                                                        const std::vector<std::string>& models = {"m1", "m2"}) {
  std::uniform_int_distribution<std::size_t> n_dist(1, max_records);
  const std::size_t n = n_dist(rng);
  std::vector<stance::StanceRecord> out;
  const auto& props = corpus.propositions();
  for (std::size_t i = 0; i < n; ++i) {
    stance::StanceRecord r;
    r.key.proposition_id = props[rng() % props.size()].id;
    r.key.prefix_key = prefix_keys()[rng() % prefix_keys().size()];
    r.key.model_id = models[rng() % models.size()];
    r.key.run_index = static_cast<int>(i);  // unique keys
    r.label = kAllStanceLabels[rng() % 4];
    r.method = rng() % 3 == 0 ? stance::ExtractionMethod::likert_integer : stance::ExtractionMethod::classifier;
    r.confidence = 1.0;
    out.push_back(r);
  }
  return out;
}

/// Writes a runnable config for the e2e fixture, pointed at the given servers.
inline fs::path write_e2e_config(const fs::path& dir, const std::string& chat_url, const std::string& stance_url,
                                 const fs::path& output_dir) {
  auto j = nlohmann::json::parse(io::read_file(fixture_path("e2e/config.json")));
  j["corpus_path"] = fixture_path("e2e/corpus.jsonl").string();
  j["prefix_registry_path"] = data_path("prefixes.json").string();
  j["output_dir"] = output_dir.string();
  for (auto& e : j["endpoints"]) e["base_url"] = chat_url;
  j["stance"]["backend_url"] = stance_url;
  auto path = dir / "config.json";
  io::write_atomic(path, j.dump(2));
  return path;
}

/// Runs the whole pipeline against fresh loopback mock servers.
inline void run_e2e(const fs::path& work_dir, const fs::path& output_dir) {
  mock::MockChatServer chat(mock::ChatScript::load(fixture_path("e2e/chat_script.json")));
  chat.start();
  mock::MockStanceServer stance_server(std::make_shared<stance::KeywordBackend>());
  stance_server.start();
  auto cfg_path = write_e2e_config(work_dir, chat.base_url(), stance_server.base_url(), output_dir);
  auto config = pipeline::load_config(cfg_path);
  pipeline::PipelineHooks hooks;
  hooks.sleep = [](std::chrono::milliseconds) {};
  pipeline::run_pipeline(config, {std::begin(pipeline::kAllStages), std::end(pipeline::kAllStages)}, hooks);
}

/// Every file under `dir`, relative path -> bytes. The response store logs
/// wall-clock timestamps and retry counts in arrival order, which depend on
/// scheduling, so it is compared without them and with its lines sorted.
inline std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dir).string();
    if (entry.path().filename() != "responses.jsonl") {
      out[rel] = io::read_file(entry.path());
      continue;
    }
    std::vector<std::string> lines;
    for (const auto& line : io::read_jsonl(entry.path())) {
      auto j = line.value;
      j.erase("timestamp");
      j.erase("attempt_count");
      lines.push_back(j.dump());
    }
    std::sort(lines.begin(), lines.end());
    for (const auto& l : lines) out[rel] += l + "\n";
  }
  return out;
}

}  // namespace testing_support
