def normalize_name(raw_name):
    trimmed = raw_name.strip().lower()
    cleaned = trimmed.replace("  ", " ")
    return cleaned


def bucket_for(score, width):
    index = int(score / width)
    if index > 9:
        index = 9
    return index
