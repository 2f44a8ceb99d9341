// rfidb2b command-line front end.
//
// Exit codes: 0 success, 1 a scenario step failed, 2 input could not be
// parsed or validated.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "rfidb2b/control_gate.hpp"
#include "rfidb2b/enterprise.hpp"
#include "rfidb2b/error.hpp"
#include "rfidb2b/gate_script.hpp"
#include "rfidb2b/rfid_sim.hpp"
#include "rfidb2b/scenario.hpp"
#include "rfidb2b/tag_codec.hpp"
#include "rfidb2b/tag_json.hpp"
#include "rfidb2b/traceability.hpp"

using namespace rfidb2b;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitStepFailure = 1;
constexpr int kExitParse = 2;

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out || !(out << text)) throw Error(Errc::IoError, "cannot write " + path);
}

json parse_json(const std::string& path) {
  try {
    return json::parse(slurp(path));
  } catch (const json::parse_error& e) {
    throw Error(Errc::SyntaxError, path + ": " + e.what());
  }
}

std::uint64_t parse_uid(const std::string& s) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used, 0);
    if (used == s.size() && v != 0) return v;
  } catch (const std::exception&) {
  }
  throw Error(Errc::SyntaxError, "bad uid '" + s + "'");
}

void print_layout(const tag::TagTemplate& t) {
  const auto layout = tag::compute_layout(t);
  std::printf("%s  id=%u v%u  payload=%zu bytes  total=%zu bytes\n", t.name.c_str(), t.template_id, t.version,
              layout.payload_size, layout.total_size());
  for (std::size_t i = 0; i < t.fields.size(); ++i) {
    const auto& f = t.fields[i];
    std::string type = tag::kind_name(f.type.kind);
    if (f.type.kind == tag::FieldKind::String) type += "(" + std::to_string(f.type.max_len) + ")";
    std::printf("  %2zu  %-20s %-12s offset %3zu size %2zu group %u%s\n", i, f.name.c_str(), type.c_str(),
                layout.slots[i].offset, layout.slots[i].size, f.group_id, f.snapshot ? "  snapshot" : "");
  }
  for (const auto& g : t.groups) std::printf("  group %u \"%s\"\n", g.id, g.title.c_str());
}

void print_display(const tag::TagTemplate& t, const tag::TagRecord& r) {
  for (const auto& section : tag::layout_groups(t, r)) {
    std::printf("[%s]\n", section.title.c_str());
    for (const auto& [name, value] : section.rows) std::printf("  %-20s %s\n", name.c_str(), value.c_str());
  }
}

void print_image(const tag::TagImage& img) {
  std::printf("uid %llu (0x%016llX)  %zu blocks x %zu bytes\n", static_cast<unsigned long long>(img.uid),
              static_cast<unsigned long long>(img.uid), img.block_count(), img.block_size);
  if (auto h = tag::parse_header(img.data); h && h->magic == tag::kMagic)
    std::printf("header: template %u v%u payload %u bytes\n", h->template_id, h->version, h->payload_length);
  else
    std::printf("header: none\n");
  for (std::size_t b = 0; b < img.block_count(); ++b) {
    ByteView block(img.data.data() + b * img.block_size, img.block_size);
    std::printf("  %3zu: %s\n", b, to_hex(block).c_str());
  }
}

std::pair<std::int64_t, std::int64_t> parse_period(const std::string& text) {
  const auto dots = text.find("..");
  if (dots == std::string::npos) throw Error(Errc::SyntaxError, "period must look like A..B");
  auto bound = [](const std::string& s) {
    if (!s.empty() && s.find_first_not_of("0123456789") == std::string::npos) return json(std::stoll(s));
    return json(s);
  };
  return {scenario::parse_time(bound(text.substr(0, dots))), scenario::parse_time(bound(text.substr(dots + 2)))};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"RFID B2B supply-network simulator"};
  app.require_subcommand(1);

  // template
  auto* tmpl = app.add_subcommand("template", "tag template tools");
  tmpl->require_subcommand(1);
  std::string tmpl_file, record_file, image_file, out_file;
  std::string uid_text = "1";
  std::size_t capacity = tag::kDefaultCapacity;
  bool as_json = false;

  auto* t_validate = tmpl->add_subcommand("validate", "check a template file");
  t_validate->add_option("template", tmpl_file, "template JSON")->required();
  t_validate->add_option("--capacity", capacity, "tag memory in bytes");

  auto* t_encode = tmpl->add_subcommand("encode", "encode a record into a tag image");
  t_encode->add_option("template", tmpl_file)->required();
  t_encode->add_option("record", record_file, "record JSON")->required();
  t_encode->add_option("--uid", uid_text, "tag uid");
  t_encode->add_option("--capacity", capacity);
  t_encode->add_option("-o,--out", out_file, "write the image JSON here");

  auto* t_decode = tmpl->add_subcommand("decode", "decode a tag image");
  t_decode->add_option("template", tmpl_file)->required();
  t_decode->add_option("image", image_file, "image JSON")->required();
  t_decode->add_flag("--json", as_json);

  auto* t_show = tmpl->add_subcommand("show", "print slot layout and visual groups");
  t_show->add_option("template", tmpl_file)->required();
  t_show->add_option("--record", record_file, "also render a record by group");

  // tag
  auto* tagcmd = app.add_subcommand("tag", "tag image tools");
  tagcmd->require_subcommand(1);
  auto* tag_dump = tagcmd->add_subcommand("dump", "block dump of a tag image");
  tag_dump->add_option("image", image_file)->required();
  tag_dump->add_option("--template", tmpl_file, "decode with this template");

  // gate
  auto* gatecmd = app.add_subcommand("gate", "control gate tools");
  gatecmd->require_subcommand(1);
  auto* gate_run = gatecmd->add_subcommand("run", "check a rule script and optionally fire one tag read");
  std::string script_file, tier_text = "MCCG";
  std::vector<std::string> template_files;
  gate_run->add_option("--script", script_file, "rule script")->required();
  gate_run->add_option("--tier", tier_text, "LCCG, MCCG or HCCG");
  gate_run->add_option("--template", template_files, "templates the gate knows");
  gate_run->add_option("--tag", image_file, "tag image to present to the reader");

  // trace
  auto* tracecmd = app.add_subcommand("trace", "provenance of a product");
  trace::TagId trace_root = 0;
  std::string registry_file, scenario_file;
  std::size_t max_depth = trace::kDefaultMaxDepth;
  tracecmd->add_option("tag_id", trace_root)->required();
  tracecmd->add_flag("--json", as_json);
  auto* reg_opt = tracecmd->add_option("--registry", registry_file, "JSON array of trace records");
  auto* scen_opt = tracecmd->add_option("--scenario", scenario_file, "run a scenario and trace its registry");
  reg_opt->excludes(scen_opt);
  tracecmd->add_option("--max-depth", max_depth);

  // scenario
  auto* scen = app.add_subcommand("scenario", "scenario runner");
  scen->require_subcommand(1);
  auto* scen_run = scen->add_subcommand("run", "run a scenario file");
  std::optional<std::uint64_t> seed;
  std::string log_file, store_file;
  bool quiet = false;
  scen_run->add_option("file", scenario_file)->required();
  scen_run->add_option("--seed", seed, "override the scenario seed");
  scen_run->add_option("--log", log_file, "write the event log (JSON lines)");
  scen_run->add_option("--store", store_file, "write the corporation event log (JSON lines)");
  scen_run->add_flag("-q,--quiet", quiet, "print only the summary");

  // report
  auto* report = app.add_subcommand("report", "corporate activity report (CSV)");
  std::string period_text;
  report->add_option("--period", period_text, "A..B, epoch ms or ISO dates")->required();
  report->add_option("--store", store_file, "corporation event log")->required();
  report->add_option("-o,--out", out_file, "write the CSV here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitParse;
  }

  try {
    if (*t_validate) {
      const auto t = tag::parse_template_file(slurp(tmpl_file), capacity);
      std::printf("OK ");
      print_layout(t);
    } else if (*t_encode) {
      const auto t = tag::parse_template_file(slurp(tmpl_file), capacity);
      const auto r = tag::record_from_json(t, parse_json(record_file));
      const auto img = tag::encode_record(t, r, parse_uid(uid_text), capacity);
      const std::string text = tag::image_to_json(img).dump(2) + "\n";
      if (out_file.empty())
        std::fputs(text.c_str(), stdout);
      else
        spill(out_file, text);
    } else if (*t_decode) {
      const auto t = tag::parse_template_file(slurp(tmpl_file));
      const auto r = tag::decode_record(t, tag::image_from_json(parse_json(image_file)));
      if (as_json)
        std::printf("%s\n", tag::record_to_json(t, r).dump(2).c_str());
      else
        print_display(t, r);
    } else if (*t_show) {
      const auto t = tag::parse_template_file(slurp(tmpl_file));
      print_layout(t);
      if (!record_file.empty()) print_display(t, tag::record_from_json(t, parse_json(record_file)));
    } else if (*tag_dump) {
      const auto img = tag::image_from_json(parse_json(image_file));
      print_image(img);
      if (!tmpl_file.empty()) {
        const auto t = tag::parse_template_file(slurp(tmpl_file));
        print_display(t, tag::decode_record(t, img));
      }
    } else if (*gate_run) {
      auto tier = gate::parse_tier(tier_text);
      if (!tier) throw Error(Errc::SyntaxError, "unknown tier '" + tier_text + "'");
      std::vector<tag::TagTemplate> templates;
      for (const auto& f : template_files) templates.push_back(tag::parse_template_file(slurp(f)));
      const std::string script = slurp(script_file);
      const auto rules = gate::parse_script(script, *tier, templates);
      std::printf("%zu rule(s) accepted for %s\n", rules.size(), gate::tier_name(*tier).c_str());
      for (const auto& r : rules) std::printf("  %s\n", gate::to_string(r).c_str());
      if (!image_file.empty()) {
        const auto img = tag::image_from_json(parse_json(image_file));
        SimClock clock;
        rfid::TagWorld world;
        world.create_tag(img.uid, img.capacity(), img.block_size);
        world.commission(img);
        rfid::ReaderField field(world, "cli");
        rfid::reader::ReaderDevice device(field);
        gate::GateConfig cfg;
        cfg.gate_id = "CLI";
        cfg.tier = *tier;
        cfg.templates = templates;
        cfg.block_size = img.block_size;
        gate::ControlGate g(cfg, clock, {&device});
        g.load_script(script);
        field.enter(img.uid);
        for (const auto& e : g.on_tag_event(img.uid)) std::printf("  effect: %s\n", gate::describe(e).c_str());
      }
    } else if (*tracecmd) {
      std::map<trace::TagId, trace::TraceRecord> records;
      if (!registry_file.empty()) {
        trace::Registry reg;
        for (const auto& j : parse_json(registry_file)) reg.register_record(trace::record_from_json(j));
        records = reg.snapshot();
      } else if (!scenario_file.empty()) {
        const auto s = scenario::load_scenario(scenario_file);
        scenario::World w(s, s.seed);
        for (std::size_t i = 0; i < s.timeline.size(); ++i) w.run_step(i, s.timeline[i]);
        records = w.registry().snapshot();
      } else {
        throw Error(Errc::SyntaxError, "trace needs --registry or --scenario");
      }
      const auto tree = trace::trace(records, trace_root, max_depth);
      if (as_json) {
        std::printf("%s\n", trace::tree_to_json(tree).dump(2).c_str());
      } else {
        std::fputs(trace::tree_to_text(tree).c_str(), stdout);
        const auto origins = trace::origin_report(tree);
        std::printf("origins: %zu, unresolved: %zu\n", origins.origins.size(), origins.unresolved);
        for (const auto& o : origins.origins)
          std::printf("  %lld [%s] at depth %zu\n", static_cast<long long>(o.tag_id), o.enterprise_id.c_str(),
                      o.path_length);
      }
    } else if (*scen_run) {
      const auto s = scenario::load_scenario(scenario_file);
      const auto result = scenario::run_scenario(s, seed);
      const std::string jsonl = result.log.to_jsonl();
      if (!log_file.empty()) spill(log_file, jsonl);
      if (!store_file.empty()) spill(store_file, result.corporation_log);
      if (!quiet && log_file.empty()) std::fputs(jsonl.c_str(), stdout);
      const auto& sm = result.summary;
      std::fprintf(stderr, "steps %zu/%zu  events %zu  alarms %zu  conflicts %zu  errors %zu\n", sm.steps,
                   s.timeline.size(), sm.events, sm.alarms, sm.conflicts, sm.errors);
      if (result.failure) {
        std::fprintf(stderr, "failed (%s): %s\n",
                     std::string(errc_name(result.failure->cause)).c_str(), result.failure->message.c_str());
        return kExitStepFailure;
      }
    } else if (*report) {
      const auto [start, end] = parse_period(period_text);
      const auto corp = enterprise::Corporation::load(store_file);
      const std::string csv = enterprise::report_csv(corp.corporate_report({start, end}));
      if (out_file.empty())
        std::fputs(csv.c_str(), stdout);
      else
        spill(out_file, csv);
    }
  } catch (const scenario::StepError& e) {
    std::fprintf(stderr, "error (%s): %s\n", std::string(errc_name(e.code())).c_str(), e.what());
    return e.code() == Errc::ReferenceError ? kExitParse : kExitStepFailure;
  } catch (const Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", std::string(errc_name(e.code())).c_str(), e.what());
    return kExitParse;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitParse;
  }
  return kExitOk;
}
