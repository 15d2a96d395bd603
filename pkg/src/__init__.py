# margrad package
