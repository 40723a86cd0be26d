// Command-line entry point for the audit pipeline.
#include "polaudit/bias.hpp"
#include "polaudit/corpus.hpp"
#include "polaudit/io.hpp"
#include "polaudit/mock_chat.hpp"
#include "polaudit/mock_stance.hpp"
#include "polaudit/pipeline.hpp"
#include "polaudit/prompts.hpp"
#include "polaudit/stance.hpp"
#include "polaudit/variants.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <iostream>

namespace fs = std::filesystem;
using namespace polaudit;
using nlohmann::json;

namespace {

constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;

// Config values that flags may override.
struct Overrides {
  std::string config_path;
  std::optional<int> runs;
  std::optional<std::string> output_dir;
  std::optional<double> threshold;
  std::optional<std::string> backend_url;
  std::optional<std::uint64_t> seed;
  std::optional<int> iterations;
  std::optional<int> bootstrap_threads;
  std::optional<std::string> corpus;
  std::optional<std::string> prefixes;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Audit config (JSON)")->required()->check(CLI::ExistingFile);
    cmd->add_option("--runs", runs, "Overrides runs");
    cmd->add_option("--output-dir", output_dir, "Overrides output_dir");
    cmd->add_option("--threshold", threshold, "Overrides stance.confidence_threshold");
    cmd->add_option("--backend-url", backend_url, "Overrides stance.backend_url ('builtin:keyword' for offline runs)");
    cmd->add_option("--seed", seed, "Overrides bootstrap.seed");
    cmd->add_option("--iterations", iterations, "Overrides bootstrap.iterations");
    cmd->add_option("--bootstrap-threads", bootstrap_threads, "Overrides bootstrap.threads");
    cmd->add_option("--corpus", corpus, "Overrides corpus_path");
    cmd->add_option("--prefixes", prefixes, "Overrides prefix_registry_path");
  }

  pipeline::AuditConfig load() const {
    auto c = pipeline::load_config(config_path);
    if (runs) c.runs = *runs;
    if (output_dir) c.output_dir = *output_dir;
    if (threshold) c.stance.confidence_threshold = *threshold;
    if (backend_url) c.stance.backend_url = *backend_url;
    if (seed) c.bootstrap.seed = *seed;
    if (iterations) c.bootstrap.iterations = *iterations;
    if (bootstrap_threads) c.bootstrap.threads = *bootstrap_threads;
    if (corpus) c.corpus_path = *corpus;
    if (prefixes) c.prefix_registry_path = *prefixes;
    pipeline::validate_config(c);
    return c;
  }
};

// Endpoint used for corpus construction: from a JSON file or from flags,
// with deterministic decoding unless the file says otherwise.
struct EndpointFlags {
  std::string file;
  std::string base_url;
  std::string model;
  std::string auth_ref;

  void attach(CLI::App* cmd) {
    cmd->add_option("--endpoint", file, "Endpoint definition (JSON object)");
    cmd->add_option("--base-url", base_url, "Chat endpoint base URL");
    cmd->add_option("--model", model, "Model id sent to the endpoint");
    cmd->add_option("--auth-ref", auth_ref, "Environment variable holding the bearer token");
  }

  ModelEndpoint resolve() const {
    ModelEndpoint e;
    if (!file.empty()) {
      json j;
      try {
        j = json::parse(io::read_file(file));
      } catch (const json::parse_error& err) {
        throw ConfigError(file + ": " + err.what());
      }
      if (!j.contains("sampling")) j["sampling"] = to_json(SamplingConfig::deterministic());
      e = endpoint_from_json(j, "endpoint");
    } else {
      if (base_url.empty() || model.empty()) throw ConfigError("generation needs --endpoint or both --base-url and --model");
      e.model_id = model;
      e.base_url = base_url;
      e.auth_ref = auth_ref;
      e.sampling = SamplingConfig::deterministic();
    }
    return e;
  }
};

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

std::vector<json> read_json_rows(const fs::path& path) {
  if (!fs::exists(path)) throw MissingArtifactError("file not found: " + path.string());
  std::vector<json> out;
  for (auto& line : io::read_jsonl(path)) out.push_back(std::move(line.value));
  return out;
}

mock::MockChatServer* g_chat = nullptr;
mock::MockStanceServer* g_stance = nullptr;

void stop_servers(int) {
  if (g_chat) g_chat->stop();
  if (g_stance) g_stance->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Political bias audit pipeline"};
  app.require_subcommand(1);
  std::function<int()> action;

  // corpus validate
  auto* corpus_cmd = app.add_subcommand("corpus", "Corpus tools")->require_subcommand(1);
  std::string corpus_path;
  auto* validate_cmd = corpus_cmd->add_subcommand("validate", "Check integrity and print the cell counts");
  validate_cmd->add_option("path", corpus_path, "Corpus JSONL")->required();
  validate_cmd->callback([&] {
    action = [&] {
      if (!fs::exists(corpus_path)) throw MissingArtifactError("corpus not found: " + corpus_path);
      auto raw = corpus::read_corpus_records(corpus_path);
      auto report = corpus::validate_propositions(raw.props);
      json out = report.to_json();
      out["version"] = raw.meta.version;
      print_json(out);
      return report.ok() ? 0 : kExitValidation;
    };
  });

  // variants generate|review
  auto* variants_cmd = app.add_subcommand("variants", "Label and variant generation with review")->require_subcommand(1);
  std::string originals_path, templates_path, items_path, labels_out;
  EndpointFlags gen_endpoint;
  auto* gen_cmd = variants_cmd->add_subcommand("generate", "Generate labels and variants for review");
  gen_cmd->add_option("--originals", originals_path, "Corpus of original statements")->required();
  gen_cmd->add_option("--templates", templates_path, "Prompt templates (JSON)")->required();
  gen_cmd->add_option("--out", items_path, "Review queue to write (JSONL)")->required();
  gen_cmd->add_option("--labels-out", labels_out, "Also generate issue/leaning labels and write them here");
  gen_endpoint.attach(gen_cmd);
  gen_cmd->callback([&] {
    action = [&] {
      const auto originals = corpus::load_corpus(originals_path);
      const auto templates = variants::load_templates(templates_path);
      variants::Generator gen{gen_endpoint.resolve(), std::make_shared<gateway::HttpChatTransport>(), {}, {}};
      std::vector<variants::ReviewItem> items;
      std::vector<json> labels;
      std::vector<std::string> human_issue, human_leaning, model_issue, model_leaning;
      for (const auto* p : originals.originals()) {
        for (auto& item : variants::generate_variants(*p, gen, templates)) items.push_back(std::move(item));
        if (labels_out.empty()) continue;
        try {
          auto l = variants::generate_labels(p->text, gen, templates);
          labels.push_back({{"id", p->id}, {"issue", to_string(l.issue)}, {"leaning", to_string(l.leaning)},
                            {"raw_issue", l.raw_issue}, {"raw_leaning", l.raw_leaning}});
          human_issue.emplace_back(to_string(p->issue));
          human_leaning.emplace_back(to_string(p->leaning));
          model_issue.emplace_back(to_string(l.issue));
          model_leaning.emplace_back(to_string(l.leaning));
        } catch (const variants::GenerationError& e) {
          labels.push_back({{"id", p->id}, {"error", e.what()}, {"raw_output", e.raw_output()}});
        }
      }
      io::write_atomic(items_path, variants::serialize_review_items(items));
      json summary = {{"items", items.size()}};
      if (!labels_out.empty()) {
        io::write_atomic(labels_out, io::to_jsonl(labels));
        if (!human_issue.empty())
          summary["label_agreement"] = {{"issue_kappa", bias::cohen_kappa(human_issue, model_issue)},
                                        {"leaning_kappa", bias::cohen_kappa(human_leaning, model_leaning)},
                                        {"sample_size", human_issue.size()}};
      }
      print_json(summary);
      return 0;
    };
  });

  std::string decisions_path, corpus_out, corpus_version = "1.0.0";
  bool regenerate_rejected = false;
  std::optional<double> issue_kappa, leaning_kappa;
  EndpointFlags review_endpoint;
  auto* review_cmd = variants_cmd->add_subcommand("review", "Apply reviewer decisions to a review queue");
  review_cmd->add_option("--items", items_path, "Review queue (JSONL), updated in place")->required();
  review_cmd->add_option("--originals", originals_path, "Corpus of original statements")->required();
  review_cmd->add_option("--decisions", decisions_path, "Decisions JSONL: {id, decision: approve|reject, reviewer}");
  review_cmd->add_flag("--regenerate-rejected", regenerate_rejected, "Pose rejected tasks again with an error notice");
  review_cmd->add_option("--templates", templates_path, "Prompt templates, needed for regeneration");
  review_cmd->add_option("--corpus-out", corpus_out, "Write the variant-complete corpus once every slot is approved");
  review_cmd->add_option("--corpus-version", corpus_version, "Version recorded in the written corpus");
  review_cmd->add_option("--issue-kappa", issue_kappa, "Issue label agreement to record in corpus metadata");
  review_cmd->add_option("--leaning-kappa", leaning_kappa, "Leaning label agreement to record in corpus metadata");
  review_endpoint.attach(review_cmd);
  review_cmd->callback([&] {
    action = [&] {
      const auto originals = corpus::load_corpus(originals_path);
      auto items = variants::load_review_items(items_path);
      std::vector<variants::ReviewDecision> decisions;
      if (!decisions_path.empty())
        for (const auto& row : read_json_rows(decisions_path)) decisions.push_back(variants::decision_from_json(row));
      auto outcome = variants::review_queue(std::move(items), decisions, originals);
      if (regenerate_rejected) {
        if (templates_path.empty()) throw ConfigError("--regenerate-rejected needs --templates");
        const auto templates = variants::load_templates(templates_path);
        variants::Generator gen{review_endpoint.resolve(), std::make_shared<gateway::HttpChatTransport>(), {}, {}};
        std::vector<std::string> rejected;
        for (const auto& i : outcome.items)
          if (i.status == variants::ReviewStatus::rejected) rejected.push_back(i.id);
        for (const auto& id : rejected) variants::regenerate(outcome.items, id, gen, templates);
      }
      io::write_atomic(items_path, variants::serialize_review_items(outcome.items));
      json summary = {{"approved", outcome.approved.size()}, {"originals", originals.originals().size()}};
      std::size_t pending = 0;
      for (const auto& i : outcome.items) pending += i.status == variants::ReviewStatus::pending;
      summary["pending"] = pending;
      if (!corpus_out.empty()) {
        if (outcome.approved.size() != 2 * originals.originals().size()) {
          summary["corpus_written"] = false;
        } else {
          corpus::CorpusMeta meta{corpus_version, originals.meta().provenance, originals.meta().extra};
          if (issue_kappa && leaning_kappa)
            variants::record_label_agreement(meta, *issue_kappa, *leaning_kappa, originals.originals().size());
          auto full = variants::attach_variants(originals, outcome.approved, meta);
          io::write_atomic(corpus_out, corpus::serialize_corpus(full));
          summary["corpus_written"] = true;
        }
      }
      print_json(summary);
      return 0;
    };
  });

  // run plan|execute|resume
  auto* run_cmd = app.add_subcommand("run", "Plan and execute prompt runs")->require_subcommand(1);
  Overrides run_plan_ov, run_exec_ov, run_resume_ov;
  auto* plan_cmd = run_cmd->add_subcommand("plan", "Write the run plan");
  run_plan_ov.attach(plan_cmd);
  plan_cmd->callback([&] {
    action = [&] {
      auto plan = pipeline::stage_plan(run_plan_ov.load());
      print_json({{"items", plan.size()}});
      return 0;
    };
  });
  auto* exec_cmd = run_cmd->add_subcommand("execute", "Query every endpoint for the planned prompts");
  run_exec_ov.attach(exec_cmd);
  exec_cmd->callback([&] {
    action = [&] {
      auto summary = pipeline::stage_execute(run_exec_ov.load(), {});
      print_json(summary.to_json());
      return summary.total_failed() == 0 ? 0 : kExitRuntime;
    };
  });
  auto* resume_cmd = run_cmd->add_subcommand("resume", "Execute only the plan items without an ok response");
  run_resume_ov.attach(resume_cmd);
  resume_cmd->callback([&] {
    action = [&] {
      auto config = run_resume_ov.load();
      const auto paths = pipeline::ArtifactPaths::under(config.output_dir);
      if (!fs::exists(paths.plan)) throw MissingArtifactError("plan artifact not found at " + paths.plan.string());
      gateway::ResponseStore store(paths.responses);
      auto remaining = gateway::resume_plan(prompts::load_plan(paths.plan), store);
      std::cerr << remaining.size() << " plan items remaining\n";
      auto summary = pipeline::stage_execute(config, {});
      print_json(summary.to_json());
      return summary.total_failed() == 0 ? 0 : kExitRuntime;
    };
  });

  // stance extract|evaluate|sample
  auto* stance_cmd = app.add_subcommand("stance", "Stance extraction and classifier evaluation")->require_subcommand(1);
  Overrides extract_ov, sample_ov;
  auto* extract_cmd = stance_cmd->add_subcommand("extract", "Turn responses into stance records");
  extract_ov.attach(extract_cmd);
  extract_cmd->callback([&] {
    action = [&] {
      auto report = pipeline::stage_stance(extract_ov.load(), {});
      print_json(report.to_json());
      return report.unresolved == 0 ? 0 : kExitRuntime;
    };
  });

  std::string gold_path, eval_backend = std::string(pipeline::kKeywordBackend), predictions_path;
  std::vector<double> thresholds = {0.0, 0.5, 0.6, 0.7, 0.8, 0.9, 0.95};
  double report_threshold = 0.9;
  auto* eval_cmd = stance_cmd->add_subcommand("evaluate", "Macro-F1 and retention against a gold fixture");
  eval_cmd->add_option("--gold", gold_path, "Gold annotations (JSONL)")->required();
  eval_cmd->add_option("--backend-url", eval_backend, "Classifier to evaluate");
  eval_cmd->add_option("--predictions", predictions_path, "Use existing stance records instead of classifying");
  eval_cmd->add_option("--thresholds", thresholds, "Confidence thresholds for the curve")->delimiter(',');
  eval_cmd->add_option("--threshold", report_threshold, "Threshold for the per-class report");
  eval_cmd->callback([&] {
    action = [&] {
      const auto gold = stance::load_gold(gold_path);
      std::vector<stance::StanceRecord> predictions;
      if (!predictions_path.empty()) {
        predictions = stance::load_stances(predictions_path);
      } else {
        auto backend = pipeline::make_backend({eval_backend});
        for (const auto& g : gold) {
          auto c = backend->classify(g.response_text, g.statement_text);
          predictions.push_back({g.key, c.label, c.confidence, stance::ExtractionMethod::classifier});
        }
      }
      json curve = json::array();
      for (const auto& p : stance::evaluate_classifier(predictions, gold, thresholds))
        curve.push_back({{"threshold", p.threshold}, {"macro_f1", io::optional_to_json(p.macro_f1)},
                         {"retention", p.retention}, {"retained", p.retained}, {"total", p.total}});
      json classes = json::array();
      for (const auto& m : stance::classifier_report(predictions, gold, report_threshold))
        classes.push_back({{"label", to_string(m.label)}, {"precision", m.precision}, {"recall", m.recall},
                           {"f1", m.f1}, {"support", m.support}});
      print_json({{"curve", curve}, {"classes", classes}, {"threshold", report_threshold}});
      return 0;
    };
  });

  int per_pair = 4;
  std::uint64_t sample_seed = 0;
  std::string strata = "prefix_variant_model", sample_out;
  auto* sample_cmd = stance_cmd->add_subcommand("sample", "Draw a stratified annotation sample");
  sample_ov.attach(sample_cmd);
  sample_cmd->add_option("--per-pair", per_pair, "Responses per stratum");
  sample_cmd->add_option("--sample-seed", sample_seed, "Sampling seed");
  sample_cmd->add_option("--strata", strata, "prefix_variant_model or prefix_model")
      ->check(CLI::IsMember({"prefix_variant_model", "prefix_model"}));
  sample_cmd->add_option("--out", sample_out, "Annotation template (gold JSONL with empty labels)")->required();
  sample_cmd->callback([&] {
    action = [&] {
      auto config = sample_ov.load();
      const auto paths = pipeline::ArtifactPaths::under(config.output_dir);
      if (!fs::exists(paths.responses)) throw MissingArtifactError("response store not found at " + paths.responses.string());
      const auto corpus = corpus::load_corpus(config.corpus_path);
      const auto responses = gateway::ResponseStore(paths.responses).resolved();
      auto kind = strata == "prefix_model" ? stance::StratumKind::prefix_model : stance::StratumKind::prefix_variant_model;
      auto sample = stance::sample_training_set(responses, corpus, per_pair, sample_seed, kind);
      std::vector<json> rows;
      for (const auto& r : sample) {
        json row = prompts::key_to_json(r.key);
        row["response_text"] = r.raw_text;
        row["statement_text"] = corpus.at(r.key.proposition_id).text;
        row["label"] = nullptr;
        row["annotators"] = json::array();
        row["adjudicated"] = false;
        rows.push_back(std::move(row));
      }
      io::write_atomic(sample_out, io::to_jsonl(rows));
      print_json({{"sampled", rows.size()}});
      return 0;
    };
  });

  // bias compute, report emit, pipeline
  Overrides bias_ov, report_ov, pipeline_ov;
  auto* bias_cmd = app.add_subcommand("bias", "Bias measures")->require_subcommand(1);
  auto* compute_cmd = bias_cmd->add_subcommand("compute", "Profiles, CIs, source differences and steering");
  bias_ov.attach(compute_cmd);
  compute_cmd->callback([&] {
    action = [&] {
      auto a = pipeline::stage_bias(bias_ov.load());
      print_json({{"profiles", a.profiles.size()}});
      return 0;
    };
  });

  auto* report_cmd = app.add_subcommand("report", "Reports")->require_subcommand(1);
  std::vector<std::string> formats;
  auto* emit_cmd = report_cmd->add_subcommand("emit", "Write the report tables");
  report_ov.attach(emit_cmd);
  emit_cmd->add_option("--format", formats, "csv and/or json")->check(CLI::IsMember({"csv", "json"}));
  emit_cmd->callback([&] {
    action = [&] {
      auto config = report_ov.load();
      if (!formats.empty()) {
        config.report_formats.clear();
        for (const auto& f : formats) config.report_formats.push_back(*report::parse_format(f));
      }
      json files = json::array();
      for (const auto& p : pipeline::stage_report(config)) files.push_back(p.string());
      print_json({{"files", files}});
      return 0;
    };
  });

  std::vector<std::string> stage_names;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "Run pipeline stages in order");
  pipeline_ov.attach(pipeline_cmd);
  pipeline_cmd->add_option("--stages", stage_names, "Subset of plan,execute,stance,bias,report")
      ->delimiter(',')
      ->check(CLI::IsMember({"plan", "execute", "stance", "bias", "report"}));
  pipeline_cmd->callback([&] {
    action = [&] {
      std::vector<pipeline::Stage> stages;
      for (const auto& s : stage_names) stages.push_back(*pipeline::parse_stage(s));
      if (stages.empty()) stages.assign(std::begin(pipeline::kAllStages), std::end(pipeline::kAllStages));
      pipeline::run_pipeline(pipeline_ov.load(), stages);
      return 0;
    };
  });

  // mock chat|stance
  auto* mock_cmd = app.add_subcommand("mock", "Loopback mock servers for offline runs")->require_subcommand(1);
  std::string script_path;
  int mock_port = 0;
  auto* mock_chat_cmd = mock_cmd->add_subcommand("chat", "Scripted OpenAI-compatible chat endpoint");
  mock_chat_cmd->add_option("--script", script_path, "Chat script (JSON)")->required();
  mock_chat_cmd->add_option("--port", mock_port, "Port on 127.0.0.1");
  mock_chat_cmd->callback([&] {
    action = [&] {
      mock::MockChatServer server(mock::ChatScript::load(script_path));
      g_chat = &server;
      std::signal(SIGINT, stop_servers);
      std::signal(SIGTERM, stop_servers);
      server.start(mock_port);
      std::cout << server.base_url() << std::endl;
      server.serve_forever(mock_port);
      g_chat = nullptr;
      return 0;
    };
  });
  auto* mock_stance_cmd = mock_cmd->add_subcommand("stance", "Keyword classifier behind the stance HTTP contract");
  mock_stance_cmd->add_option("--port", mock_port, "Port on 127.0.0.1");
  mock_stance_cmd->callback([&] {
    action = [&] {
      mock::MockStanceServer server(std::make_shared<stance::KeywordBackend>());
      g_stance = &server;
      std::signal(SIGINT, stop_servers);
      std::signal(SIGTERM, stop_servers);
      server.start(mock_port);
      std::cout << server.base_url() << std::endl;
      server.serve_forever(mock_port);
      g_stance = nullptr;
      return 0;
    };
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitValidation;
  }

  try {
    return action ? action() : 0;
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
