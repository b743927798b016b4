"""Judge prompt templates. Placeholders are ``{name}``; ``{{`` and ``}}`` are literal braces."""

_RATE_FORMAT = (
    'After providing your explanation, you must rate the response on a scale of 1 to 10 by strictly '
    'following this format: "[[rating]]", for example: "Rating: [[5]]".'
)

MT_BENCH_TURN1 = {
    "system": "You are a helpful assistant.",
    "user": (
        "[Instruction]\n"
        "Please act as an impartial judge and evaluate the quality of the response provided by an AI "
        "assistant to the user question displayed below. Your evaluation should consider factors such as "
        "the helpfulness, relevance, accuracy, depth, creativity, and level of detail of the response. "
        "Begin your evaluation by providing a short explanation. Be as objective as possible. "
        + _RATE_FORMAT + "\n"
        "\n"
        "[Question]\n"
        "{question}\n"
        "\n"
        "[The Start of Assistant's Answer]\n"
        "{answer}\n"
        "[The End of Assistant's Answer]"
    ),
}

MT_BENCH_TURN1_MATH = {
    "system": "You are a helpful assistant.",
    "user": (
        "[Instruction]\n"
        "Please act as an impartial judge and evaluate the quality of the response provided by an AI "
        "assistant to the user question displayed below. Your evaluation should consider correctness and "
        "helpfulness. You will be given a reference answer and the assistant's answer. Begin your "
        "evaluation by comparing the assistant's answer with the reference answer. Identify and correct "
        "any mistakes. Be as objective as possible. " + _RATE_FORMAT + "\n"
        "\n"
        "[Question]\n"
        "{question}\n"
        "\n"
        "[The Start of Reference Answer]\n"
        "{ref_answer}\n"
        "[The End of Reference Answer]\n"
        "\n"
        "[The Start of Assistant's Answer]\n"
        "{answer}\n"
        "[The End of Assistant's Answer]"
    ),
}

_CONVERSATION = (
    "<|The Start of Assistant A's Conversation with User|>\n"
    "\n"
    "### User:\n"
    "{question_1}\n"
    "\n"
    "### Assistant A:\n"
    "{answer_1}\n"
    "\n"
    "### User:\n"
    "{question_2}\n"
    "\n"
    "### Assistant A:\n"
    "{answer_2}\n"
    "\n"
    "<|The End of Assistant A's Conversation with User|>"
)

MT_BENCH_TURN2 = {
    "system": (
        "Please act as an impartial judge and evaluate the quality of the response provided by an AI "
        "assistant to the user question displayed below. Your evaluation should consider factors such as "
        "the helpfulness, relevance, accuracy, depth, creativity, and level of detail of the response. "
        "You evaluation should focus on the assistant's answer to the second user question. Begin your "
        "evaluation by providing a short explanation. Be as objective as possible. " + _RATE_FORMAT
    ),
    "user": _CONVERSATION,
}

MT_BENCH_TURN2_MATH = {
    "system": (
        "Please act as an impartial judge and evaluate the quality of the response provided by an AI "
        "assistant to the user question. Your evaluation should consider correctness and helpfulness. "
        "You will be given a reference answer and the assistant's answer. You evaluation should focus on "
        "the assistant's answer to the second question. Begin your evaluation by comparing the "
        "assistant's answer with the reference answer. Identify and correct any mistakes. Be as "
        "objective as possible. " + _RATE_FORMAT
    ),
    "user": (
        "<|The Start of Reference Answer|>\n"
        "\n"
        "### User:\n"
        "{question_1}\n"
        "\n"
        "### Reference answer:\n"
        "{ref_answer_1}\n"
        "\n"
        "### User:\n"
        "{question_2}\n"
        "\n"
        "### Reference answer:\n"
        "{ref_answer_2}\n"
        "\n"
        "<|The End of Reference Answer|>\n"
        "\n"
        "\n" + _CONVERSATION
    ),
}

AIRBENCH_CHAT = {
    "system": None,
    "user": (
        "You are a helpful and precise assistant for checking the quality of the answer.\n"
        "[Detailed Audio Description]\n"
        "{meta_info}\n"
        "[Question]\n"
        "{question}\n"
        "[The Start of Assistant 1s Answer]\n"
        "{reference}\n"
        "[The End of Assistant 1s Answer]\n"
        "[The Start of Assistant 2s Answer]\n"
        "{ai_response}\n"
        "[The End of Assistant 2s Answer]\n"
        "[System]\n"
        "We would like to request your feedback on the performance of two AI assistants in response to "
        "the user question and audio description displayed above. AI assistants are provided with "
        "detailed audio descriptions and questions.\n"
        "Please rate the helpfulness, relevance, accuracy, and comprehensiveness of their responses. Each "
        "assistant receives an overall score on a scale of 1 to 10, where a higher score indicates better "
        "overall performance. Please output a single line containing only two values indicating the "
        "scores for Assistant 1 and 2, respectively. The two scores are separated by a space."
    ),
}

SUMMARIZATION = {
    "system": None,
    "user": (
        "You are a skilled evaluator for summaries generated based on user-provided instructions. A "
        "prominent organization has enlisted your help to assess the overall quality of a summary by "
        "focusing on how effectively it adheres to the user's specific instructions. Rate the summary on "
        "a scale of 1 to 7 based on the following criteria:\n"
        "\n"
        "1. If the summary fulfills the user's instructions comprehensively, accurately captures the "
        "required details, excludes any explicitly prohibited information, maintains the correct level "
        "of detail, adheres to the requested structure (e.g., bullet points, paragraphs), and is both "
        "fluent and coherent, assign a score of 7. The summary should read naturally, resembling a "
        "human-written summary. Coherence means ideas are logical and well-connected, with smooth "
        "transitions.\n"
        "\n"
        "2. If the summary mostly fulfills the user instructions but has minor issues, such as slight "
        "deviations in structure, missing small details, or minor readability issues, assign a score of "
        "5-6, depending on the severity of the deviation. Consider whether the issues are easy to fix and "
        "whether they affect the summary's usability.\n"
        "\n"
        "3. If the summary fulfills the majority of the instructions but includes unimportant or extra "
        "information, omits key details specified by the user, or diverges slightly in structure or "
        "emphasis, assign a score of 4-5, depending on the significance of the issues. Weigh the "
        "importance of missing or extraneous content against the clarity and adherence to instructions.\n"
        "\n"
        "4. If the summary partially adheres to the instructions, capturing some of the requested "
        "details but introducing inconsistencies, hallucinations, or irrelevant content, assign a score "
        "of 2-4, depending on the extent of the deviations and errors. Penalize for any explicitly "
        "prohibited content that has been included.\n"
        "\n"
        "5. If the summary minimally adheres to the instructions, misses most of the required details, "
        "includes significant irrelevant or hallucinated content, or ignores the specified structure or "
        "tone, assign a score of 1-3, depending on the severity of the shortcomings.\n"
        "\n"
        "6. If the summary fails to follow the user's instructions altogether, missing all critical "
        "requirements or containing a high proportion of irrelevant or fabricated content, assign a "
        "score of 1. This includes summaries that fail to meet any formatting, detail, or exclusion "
        "criteria.\n"
        "\n"
        "Here is the input document, user instruction and the corresponding summary.\n"
        "Source:\n"
        "```\n"
        "{src}\n"
        "```\n"
        "User Instruction:\n"
        "```\n"
        "{instruction}\n"
        "```\n"
        "Summary\n"
        "```\n"
        "{tgt}\n"
        "```\n"
        "Note: It is helpful to read the summary first, before reading the source document. This will "
        "allow you to judge whether you understand the main contents of the source document through the "
        "summary alone. Afterward, you can assess to what extent the summary accurately reflects the "
        "source document.\n"
        "\n"
        "Note: Based on the above criteria and assign a overall score of summary in the scale 1-7. If the "
        'summary is not provided for evaluation, return "N/A". Besides the score, you should also '
        "provide a **brief** explanation.\n"
        "\n"
        "Note: Use the following json format for easy downstream consumption.\n"
        "\n"
        "{{\n"
        '    "explanation": "judge the summary based on the given criteria and explain your reasoning for '
        'the score you are going to give in the next field.",\n'
        '    "score": THE_SCORE_VALUE\n'
        "}}"
    ),
}

TEMPLATES = {
    "mt_bench_turn1": MT_BENCH_TURN1,
    "mt_bench_turn1_math": MT_BENCH_TURN1_MATH,
    "mt_bench_turn2": MT_BENCH_TURN2,
    "mt_bench_turn2_math": MT_BENCH_TURN2_MATH,
    "airbench_chat": AIRBENCH_CHAT,
    "summarization": SUMMARIZATION,
}
