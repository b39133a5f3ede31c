#include "docrag/dpr.hpp"

#include <future>
#include <set>
#include <sstream>

namespace docrag {

using nlohmann::json;

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

json asset_json(const AssetRef& a) {
    return {{"doc_id", a.doc_id}, {"block_id", a.block_id}, {"storage_path", a.storage_path},
            {"caption", a.caption}, {"page", a.page}};
}

}  // namespace

json UnifiedContext::to_json() const {
    json visuals = json::array();
    for (const auto& v : visual_texts)
        visuals.push_back({{"text", v.text}, {"source", asset_json(v.source)}, {"prompt", v.prompt_used},
                           {"degraded", v.degraded}});
    return {{"visual_texts", visuals},
            {"retrieved", retrieved.to_json()},
            {"intent", docrag::to_string(intent)},
            {"instruction", docrag::to_string(instruction)},
            {"perception_degraded", perception_degraded}};
}

json Answer::record() const {
    json cites = json::array();
    for (const auto& c : citations) cites.push_back({{"doc_id", c.doc_id}, {"page", c.page}, {"block_id", c.block_id}});
    json by_stage = json::object();
    for (StageTag s : kAllStages) by_stage[std::string(docrag::to_string(s))] = ledger_slice.tokens_for(s);
    return {{"query", query},
            {"answer", text},
            {"complexity", docrag::to_string(complexity_used)},
            {"abstained", abstained},
            {"citations", cites},
            {"tokens_by_stage", by_stage}};
}

json AnswerTrace::to_json() const {
    return {{"decision", docrag::to_json(decision)},
            {"context", context.to_json()},
            {"system", system_prompt},
            {"user", user_prompt}};
}

std::string build_instruction(InstructionKey key) {
    std::string base;
    switch (key) {
        case InstructionKey::simple_extract: base = "Extract target row/column value from table descriptions."; break;
        case InstructionKey::moderate_compute: base = "Calculate/compare data using table descriptions (show steps)."; break;
        case InstructionKey::complex_integrate: base = "Integrate multi-table/text data for step-by-step analysis."; break;
    }
    return base + "\n" + std::string(kAbstentionClause);
}

std::string perception_prompt(const std::string& query) { return "Describe this asset with respect to: " + query; }

bool is_abstention(std::string_view response) { return response.find(kAbstentionPhrase) != std::string_view::npos; }

std::string render_context(const UnifiedContext& c, const std::string& query) {
    std::ostringstream out;
    out << "Intent: " << to_string(c.intent) << "\n";
    if (!c.visual_texts.empty()) {
        out << "\nVisual evidence:\n";
        for (const auto& v : c.visual_texts) {
            out << "[page " << v.source.page;
            if (!v.source.caption.empty()) out << ", " << v.source.caption;
            out << "] " << v.text << "\n";
        }
    }
    const auto& r = c.retrieved;
    if (!r.entity_facts.empty()) {
        out << "\nFacts:\n";
        for (const auto& f : r.entity_facts) out << "- " << f << "\n";
    }
    if (!r.chunks.empty()) {
        out << "\nPassages:\n";
        for (const auto& ch : r.chunks) out << "[" << ch.chunk_id << "] " << ch.text << "\n";
    }
    if (!r.neighbor_context.empty()) {
        out << "\nSurrounding text:\n";
        for (const auto& n : r.neighbor_context)
            out << "[" << n.doc_id << " p" << n.page << " " << n.block_id << "] " << n.text << "\n";
    }
    out << "\nQuestion: " << query;
    return out.str();
}

std::vector<VisualDescription> DprEngine::perceive(const std::vector<AssetRef>& assets, const std::string& query,
                                                   CostLedger* slice) const {
    struct Job {
        VisualDescription desc;
        CostLedger ledger;
    };
    const std::string prompt = perception_prompt(query);
    std::vector<std::future<Job>> futures;
    futures.reserve(assets.size());
    for (const auto& a : assets) {
        futures.push_back(std::async(std::launch::async, [this, a, prompt] {
            Job job;
            job.desc.source = a;
            job.desc.prompt_used = prompt;
            try {
                const AssetRepository& repo = corpus_.assets(a.doc_id);
                ImageInput image{repo.media_type(a.storage_path), repo.read_bytes(a.storage_path), a.storage_path};
                std::string user = prompt;
                if (!a.caption.empty()) user += "\nCaption: " + a.caption;
                const ModelCall call = gateway_.complete(Role::perception_vlm, ChatRequest{"", user, {std::move(image)}},
                                                         StageTag::image_description, &job.ledger);
                job.desc.text = trim(call.response);
            } catch (const Error&) {
                job.desc.text.clear();
            }
            if (job.desc.text.empty()) {
                job.desc.degraded = true;
                job.desc.text = a.caption;
            }
            return job;
        }));
    }
    std::vector<VisualDescription> out;
    out.reserve(assets.size());
    for (auto& f : futures) {
        Job job = f.get();
        if (slice) slice->extend(job.ledger);
        out.push_back(std::move(job.desc));
    }
    return out;
}

Answer DprEngine::reason(const UnifiedContext& context, const std::string& query, CostLedger* slice,
                         AnswerTrace* trace) const {
    const std::string system = build_instruction(context.instruction);
    const std::string user = render_context(context, query);
    if (trace) {
        trace->context = context;
        trace->system_prompt = system;
        trace->user_prompt = user;
    }
    CostLedger local;
    const ModelCall call = gateway_.complete(Role::reasoning_llm, ChatRequest{system, user, {}}, StageTag::summary, &local);
    if (slice) slice->extend(local);

    Answer a;
    a.query = query;
    a.text = trim(call.response);
    a.mode = context.retrieved.mode;
    a.complexity_used = complexity_for_mode(a.mode);
    a.abstained = is_abstention(a.text);
    a.ledger_slice = local;
    if (!a.abstained) {
        std::set<Citation> seen;
        auto cite = [&](Citation c) {
            if (seen.insert(c).second) a.citations.push_back(std::move(c));
        };
        for (const auto& ch : context.retrieved.chunks) {
            if (ch.source_block_ids.empty()) continue;
            const ContentBlock* b = corpus_.find_block(ch.doc_id, ch.source_block_ids.front());
            if (b) cite({ch.doc_id, b->page, b->block_id});
        }
        for (const auto& v : context.visual_texts) cite({v.source.doc_id, v.source.page, v.source.block_id});
    }
    return a;
}

Answer DprEngine::answer(const std::string& query, const AnswerOptions& options, AnswerTrace* trace) const {
    CostLedger slice;

    RoutingDecision decision;
    if (options.mode_override) {
        decision.mode = *options.mode_override;
        decision.complexity = complexity_for_mode(decision.mode);
        decision.instruction = route_target(decision.complexity).instruction;
        decision.features = heuristic_features(query);
        decision.rationale = "mode override";
    } else {
        try {
            decision = router_.route(query, &slice);
        } catch (const Error& e) {
            throw StageError("routing", e.what());
        }
    }

    UnifiedContext context;
    context.intent = decision.features.intent;
    context.instruction = decision.instruction;
    try {
        if (decision.sub_queries.empty()) {
            context.retrieved = linker_.retrieve(query, decision.mode, options.doc_filter, &slice);
        } else {
            std::vector<RetrievalContext> parts;
            for (const auto& sq : decision.sub_queries)
                parts.push_back(linker_.retrieve(sq, decision.mode, options.doc_filter, &slice));
            context.retrieved = linker_.merge_contexts(query, parts);
            context.retrieved.mode = decision.mode;
        }
    } catch (const Error& e) {
        throw StageError("retrieval", e.what());
    }

    try {
        context.visual_texts = perceive(context.retrieved.asset_refs, query, &slice);
    } catch (const Error& e) {
        throw StageError("image_description", e.what());
    }
    context.perception_degraded =
        !context.visual_texts.empty() &&
        std::all_of(context.visual_texts.begin(), context.visual_texts.end(), [](const auto& v) { return v.degraded; });

    Answer a;
    try {
        a = reason(context, query, &slice, trace);
    } catch (const Error& e) {
        throw StageError("summary", e.what());
    }
    a.complexity_used = decision.complexity;
    a.mode = decision.mode;
    a.ledger_slice = slice;
    if (trace) trace->decision = decision;
    return a;
}

}  // namespace docrag
