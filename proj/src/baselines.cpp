#include "imm/baselines.hpp"

#include <cctype>
#include <thread>

#include "imm/error.hpp"
#include "imm/rng.hpp"
#include "imm/templates.hpp"

namespace imm {

std::string_view yes_no_name(YesNo v) noexcept {
    switch (v) {
        case YesNo::Yes: return "yes";
        case YesNo::No: return "no";
        case YesNo::Abstain: return "abstain";
    }
    return "abstain";
}

YesNo parse_yes_no(std::string_view reply) {
    auto alpha = [](char c) { return std::isalpha(static_cast<unsigned char>(c)) != 0; };
    std::size_t i = 0;
    while (i < reply.size()) {
        if (!alpha(reply[i])) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < reply.size() && alpha(reply[j])) ++j;
        std::string word;
        for (std::size_t k = i; k < j; ++k) word += static_cast<char>(std::tolower(static_cast<unsigned char>(reply[k])));
        if (word == "yes" || word == "yeah" || word == "yep") return YesNo::Yes;
        if (word == "no" || word == "nope") return YesNo::No;
        i = j;
    }
    return YesNo::Abstain;
}

std::string build_zero_shot_prompt(const Conversation& conv) {
    return templates::render(templates::zero_shot_prompt(), {{"dialogue", format_plain(conv)}});
}

BaselineAnswer ask_yes_no(ChatModelClient& client, const std::string& prompt, const BaselineOptions& opts) {
    auto backoff = opts.retry.base_backoff;
    for (int attempt = 0;; ++attempt) {
        try {
            BaselineAnswer out;
            out.raw_text = client.complete(prompt, opts.sampling);
            out.answer = parse_yes_no(strip_thinking(out.raw_text, opts.think_delimiter));
            return out;
        } catch (const Error& e) {
            if (e.code() != Errc::BackendError || attempt >= opts.retry.retry_limit) throw;
        }
        if (backoff.count() > 0) std::this_thread::sleep_for(backoff);
        backoff *= 2;
    }
}

BaselineAnswer zero_shot_classify(ChatModelClient& client, const Conversation& conv, const BaselineOptions& opts) {
    return ask_yes_no(client, build_zero_shot_prompt(conv), opts);
}

FewShotPrompt build_few_shot_prompt(const Conversation& query, const std::vector<Conversation>& pool, std::uint64_t seed) {
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        if (pool[i].id == query.id || !pool[i].binary_label) continue;
        (*pool[i].binary_label ? pos : neg).push_back(i);
    }
    if (pos.size() < 2 || neg.size() < 2)
        throw Error(Errc::InsufficientPool, "need 2 positive and 2 negative exemplars besides '" + query.id + "', have " +
                                                std::to_string(pos.size()) + " and " + std::to_string(neg.size()));
    Rng rng(seed);
    auto pick_two = [&rng](std::vector<std::size_t>& v) {
        // partial Fisher-Yates: only the first two slots are needed
        for (std::size_t k = 0; k < 2; ++k) std::swap(v[k], v[k + rng.below(v.size() - k)]);
        return std::vector<std::size_t>{v[0], v[1]};
    };
    std::vector<std::size_t> chosen = pick_two(pos);
    for (auto i : pick_two(neg)) chosen.push_back(i);
    rng.shuffle(chosen);

    FewShotPrompt out;
    std::string examples;
    for (auto i : chosen) {
        const bool label = *pool[i].binary_label;
        examples += templates::render(templates::few_shot_example(), {{"dialogue", format_plain(pool[i])}, {"answer", label ? "Yes" : "No"}});
        out.exemplar_ids.push_back(pool[i].id);
        out.exemplar_labels.push_back(label);
    }
    out.text = templates::render(templates::few_shot_prompt(), {{"examples", examples}, {"dialogue", format_plain(query)}});
    return out;
}

FewShotAnswer few_shot_classify(ChatModelClient& client, const Conversation& conv, const std::vector<Conversation>& pool,
                                std::uint64_t seed, const BaselineOptions& opts) {
    auto prompt = build_few_shot_prompt(conv, pool, seed);
    return {ask_yes_no(client, prompt.text, opts), std::move(prompt.exemplar_ids)};
}

}  // namespace imm
