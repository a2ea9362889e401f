#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sarscout/dataset.hpp"
#include "sarscout/detections.hpp"
#include "sarscout/detector.hpp"
#include "sarscout/error.hpp"
#include "sarscout/eval.hpp"
#include "sarscout/gateway.hpp"
#include "sarscout/grounding.hpp"
#include "sarscout/image.hpp"
#include "sarscout/overlay.hpp"
#include "sarscout/prompting.hpp"
#include "sarscout/session.hpp"
#include "sarscout/vlm_client.hpp"

namespace sarscout {

enum ExitCode : int { exit_ok = 0, exit_usage = 1, exit_runtime = 2 };

namespace cli_detail {

struct DetectorFlags {
  std::string backend{"file"};
  std::string detections;
  std::string model;
  std::string sidecar;
  std::optional<double> conf;
  std::optional<double> nms;

  void attach(CLI::App& cmd) {
    cmd.add_option("--backend", backend, "Detector backend")
        ->check(CLI::IsMember({"stub", "file", "onnx"}))
        ->capture_default_str();
    cmd.add_option("--detections", detections, "Detections JSONL (file backend)");
    cmd.add_option("--model", model, "ONNX model (onnx backend)");
    cmd.add_option("--sidecar", sidecar, "Model sidecar JSON (onnx backend)");
    cmd.add_option("--conf", conf, "Confidence threshold")->check(CLI::Range(0.0, 1.0));
    cmd.add_option("--nms", nms, "NMS IoU threshold")->check(CLI::Range(0.0, 1.0));
  }

  [[nodiscard]] std::shared_ptr<const DetectorBackend> make() const {
    if (backend == "file") {
      if (detections.empty()) fail(ErrorKind::invalid_argument, "--detections is required for the file backend");
      return std::make_shared<FileBackend>(detections);
    }
    if (backend == "onnx") {
      if (model.empty()) fail(ErrorKind::invalid_argument, "--model is required for the onnx backend");
      std::filesystem::path side = sidecar.empty() ? std::filesystem::path(model).replace_extension(".json")
                                                   : std::filesystem::path(sidecar);
      return std::make_shared<OnnxBackend>(model, side);
    }
    return std::make_shared<StubBackend>();
  }

  [[nodiscard]] DetectorConfig config(const DetectorBackend& b) const {
    DetectorConfig c = b.default_config();
    if (conf) c.conf_threshold = *conf;
    if (nms) c.nms_threshold = *nms;
    return c;
  }
};

inline void write_file(const std::filesystem::path& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::not_found, "cannot write " + path.string());
  out << data;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::not_found, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void report_error(std::ostream& err, bool json, const std::string& kind, const std::string& message) {
  if (json) {
    err << error_body(kind, message) << '\n';
  } else {
    err << "error (" << kind << "): " << message << '\n';
  }
}

}  // namespace cli_detail

/// Entry point shared by the `sarscout` binary and the tests. `in` feeds the
/// chat loop's questions.
inline int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out,
                   std::ostream& err) {
  using namespace cli_detail;
  CLI::App app{"Box-grounded SAR ship visual question answering", "sarscout"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "Print errors to stderr as JSON");

  // detect
  auto* detect = app.add_subcommand("detect", "Detect ships in one image");
  std::string detect_image, detect_out;
  DetectorFlags detect_flags;
  detect->add_option("image", detect_image, "Input image")->required();
  detect->add_option("--out", detect_out, "Write detections JSONL here instead of stdout");
  detect_flags.attach(*detect);

  // chat
  auto* chat = app.add_subcommand("chat", "Multi-turn dialogue about one image; questions are read from stdin");
  std::string chat_image, chat_mode{"with"}, chat_script, chat_templates, chat_transcript, chat_model;
  bool chat_turn0_boxes_only = false;
  DetectorFlags chat_flags;
  chat->add_option("image", chat_image, "Input image")->required();
  chat->add_option("--mode", chat_mode, "with | without ship boxes")
      ->check(CLI::IsMember({"with", "without", "with_boxes", "without_boxes"}))
      ->capture_default_str();
  chat->add_option("--mock-script", chat_script, "Scripted VLM answers (JSON); default uses VLM_* env vars");
  chat->add_option("--templates", chat_templates, "Prompt template directory");
  chat->add_option("--transcript", chat_transcript, "Write the transcript JSON here on exit");
  chat->add_option("--model-name", chat_model, "Model name sent to the endpoint");
  chat->add_flag("--scene-turn0-only", chat_turn0_boxes_only, "Attach the scene block to turn 0 only");
  chat_flags.attach(*chat);

  // eval
  auto* eval = app.add_subcommand("eval", "mAP report for precomputed detections");
  std::string eval_dets, eval_gt, eval_dims, eval_format{"table"}, eval_detector{"detector"},
      eval_dataset{"dataset"}, eval_interp{"101"};
  eval->add_option("--dets", eval_dets, "Detections JSONL")->required();
  eval->add_option("--gt", eval_gt, "YOLO label directory or COCO JSON")->required();
  eval->add_option("--dims", eval_dims, "image_id,width,height CSV (required for YOLO labels)");
  eval->add_option("--format", eval_format, "Output format")
      ->check(CLI::IsMember({"table", "json", "markdown", "csv"}))
      ->capture_default_str();
  eval->add_option("--detector-name", eval_detector, "Row label")->capture_default_str();
  eval->add_option("--dataset-name", eval_dataset, "Column label")->capture_default_str();
  eval->add_option("--interpolation", eval_interp, "101 | all")
      ->check(CLI::IsMember({"101", "all"}))
      ->capture_default_str();

  // overlay
  auto* overlay = app.add_subcommand("overlay", "Draw detections and answer regions onto an image");
  std::string overlay_image, overlay_dets, overlay_answer, overlay_out;
  overlay->add_option("image", overlay_image, "Input image")->required();
  overlay->add_option("--dets", overlay_dets, "Detections JSONL")->required();
  overlay->add_option("--answer", overlay_answer, "Answer text file whose coordinates are drawn");
  overlay->add_option("--out", overlay_out, "Output PNG")->required();

  // serve
  auto* serve = app.add_subcommand("serve", "Run the HTTP gateway");
  std::string serve_config;
  serve->add_option("--config", serve_config, "Service config file")->required();

  std::vector<const char*> argv{"sarscout"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_ok;
  } catch (const CLI::ParseError& e) {
    const bool json = std::find(args.begin(), args.end(), "--json-errors") != args.end();
    report_error(err, json, "usage", e.what());
    if (!json) err << "run 'sarscout --help' for usage\n";
    return exit_usage;
  }

  try {
    if (detect->parsed()) {
      const auto backend = detect_flags.make();
      const Image image = load_image(detect_image);
      const DetectionSet set = backend->detect(image, detect_flags.config(*backend));
      if (detect_out.empty()) {
        out << to_jsonl(set);
      } else {
        write_file(detect_out, to_jsonl(set));
        out << set.boxes.size() << " ships -> " << detect_out << '\n';
      }
      return exit_ok;
    }

    if (chat->parsed()) {
      const auto backend = chat_flags.make();
      std::shared_ptr<VlmTransport> transport;
      SessionOptions opts;
      opts.detector = std::nullopt;
      if (chat_flags.conf || chat_flags.nms) opts.detector = chat_flags.config(*backend);
      opts.scene_block_every_turn = !chat_turn0_boxes_only;
      if (!chat_script.empty()) {
        transport = MockTransport::from_file(chat_script);
      } else {
        const auto ep = HttpEndpoint::from_env();
        if (!ep) fail(ErrorKind::invalid_argument, "set VLM_BASE_URL (or pass --mock-script)");
        transport = std::make_shared<HttpTransport>(*ep);
        if (!ep->model.empty()) opts.model_name = ep->model;
      }
      if (!chat_model.empty()) opts.model_name = chat_model;
      auto vlm = std::make_shared<VlmClient>(transport);
      PromptTemplates templates =
          chat_templates.empty() ? PromptTemplates::builtin() : PromptTemplates::from_directory(chat_templates);
      auto store = std::make_shared<MemorySessionStore>();
      SessionManager manager(store, backend, vlm, templates, opts);

      const Image image = load_image(chat_image);
      const ChatSession s = manager.start_session(image, parse_prompt_mode(chat_mode));
      const auto print_turn = [&](const Turn& t) {
        out << "[turn " << t.index << "] Q: " << t.question << '\n';
        out << "[turn " << t.index << "] A: " << t.answer_text << "\n\n";
        out.flush();
      };
      out << "session " << s.session_id << " (" << to_string(s.mode) << ", " << s.detections.boxes.size()
          << " ships detected by " << s.detections.detector_name << ")\n\n";
      print_turn(s.turns.at(0));
      for (std::string line; std::getline(in, line);) {
        const std::string q = detail::trim_copy(line);
        if (q.empty()) continue;
        if (q == "quit" || q == "exit" || q == ":q") break;
        print_turn(manager.ask(s.session_id, q));
      }
      if (!chat_transcript.empty()) write_file(chat_transcript, manager.export_transcript(s.session_id));
      return exit_ok;
    }

    if (eval->parsed()) {
      GroundTruthIndex gts;
      const std::filesystem::path gt_path(eval_gt);
      if (std::filesystem::is_directory(gt_path)) {
        if (eval_dims.empty()) fail(ErrorKind::invalid_argument, "--dims is required with a YOLO label directory");
        gts = load_yolo_annotations(gt_path, load_dims_index(eval_dims));
      } else {
        gts = load_coco_annotations(gt_path);
      }
      const DetectionIndex index = load_detections_index(eval_dets);
      std::map<std::string, DetectionSet> dets;
      const DetectorConfig keep_all{0.0, 1.0};
      for (const auto& [id, gt] : gts) {
        dets[id] = detections_for_image(index, id, gt.image_w, gt.image_h, keep_all, MissingImagePolicy::empty,
                                        eval_detector);
      }
      for (const auto& [id, boxes] : index) {
        if (!gts.contains(id)) dets[id] = DetectionSet{id, 0, 0, boxes, eval_detector, 0.0, 1.0};
      }
      EvalOptions opts{eval_detector, eval_dataset,
                       eval_interp == "all" ? Interpolation::all_points : Interpolation::coco101};
      const EvalReport report = evaluate(dets, gts, opts);
      if (eval_format == "json") {
        out << to_json(report).dump(2) << '\n';
      } else {
        ComparisonTable table;
        table.add(report);
        out << (eval_format == "markdown" ? table.markdown() : eval_format == "csv" ? table.csv() : table.text());
      }
      for (const auto& w : report.warnings) err << "warning: " << w << '\n';
      return exit_ok;
    }

    if (overlay->parsed()) {
      const Image image = load_image(overlay_image);
      const DetectionSet set = load_detections_file(overlay_dets, image.id, image.width(), image.height(),
                                                    DetectorConfig{0.0, 1.0});
      std::vector<AnswerRegion> regions;
      if (!overlay_answer.empty()) regions = extract_regions(read_text(overlay_answer), image.width(), image.height());
      const auto png = render_overlay(image.bytes, set.boxes, regions);
      write_file(overlay_out, std::string(png.begin(), png.end()));
      out << set.boxes.size() << " boxes, " << regions.size() << " regions -> " << overlay_out << '\n';
      return exit_ok;
    }

    if (serve->parsed()) {
      const ServiceConfig cfg = load_service_config(serve_config);
      auto gateway = Gateway::from_config(cfg);
      out << "listening on http://" << cfg.host << ":" << cfg.port << '\n';
      out.flush();
      if (!gateway->listen()) fail(ErrorKind::transport, "cannot listen on " + cfg.host + ":" + std::to_string(cfg.port));
      return exit_ok;
    }
  } catch (const Error& e) {
    report_error(err, json_errors, std::string(e.kind_name()), e.what());
    return e.kind() == ErrorKind::invalid_argument ? exit_usage : exit_runtime;
  } catch (const std::exception& e) {
    report_error(err, json_errors, "internal", e.what());
    return exit_runtime;
  }
  return exit_usage;
}

}  // namespace sarscout
