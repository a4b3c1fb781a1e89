package mathy

const ScaleFactor = 3

func Double(value int) int {
	return value * 2
}

func Scale(value int, factor int) int {
	result := value * factor
	if result < 0 {
		result = -result
	}
	return result
}
