package util

func Repeat(text string, count int) string {
	combined := ""
	for i := 0; i < count; i++ {
		combined = combined + text
	}
	return combined
}

func Shout(text string) string {
	marked := text + "!"
	return marked
}
